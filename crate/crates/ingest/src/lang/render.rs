//! Canonical plan rendering: a deterministic, re-parseable program text.
//! Statements appear in stage-topological order (each stage's statements in
//! using order, unused statements last), stage statements follow in
//! topological order. Keywords are upper-cased, spacing normalized, `now`
//! arithmetic already resolved. The same plan always renders to byte-
//! identical text.

use crate::lang::ast::*;
use crate::plan::{IngestPlan, ParamValue, Stage};

fn render_opref(r: &OpRef) -> String {
    if r.args.is_empty() {
        r.name.clone()
    } else {
        let args: Vec<String> = r.args.iter().map(ParamValue::render).collect();
        format!("{}({})", r.name, args.join(", "))
    }
}

fn render_statement(name: &str, stmt: &Statement) -> String {
    let mut out = format!("{name} = ");
    match stmt {
        Statement::Select(sel) => {
            out.push_str("SELECT ");
            match &sel.projection {
                Projection::Star => out.push('*'),
                Projection::Names(names) => out.push_str(&names.join(", ")),
            }
            out.push_str(&format!(" FROM {}", sel.from));
            if let Some(using) = &sel.using {
                out.push_str(&format!(" USING {}", render_opref(using)));
            }
            if let Some(filter) = &sel.filter {
                out.push_str(&format!(" WHERE {}", render_opref(filter)));
            }
            if let Some(rep) = &sel.replicate {
                match rep {
                    ReplicateBy::K(k) => out.push_str(&format!(" REPLICATE BY {k}")),
                    ReplicateBy::Op(opref) => {
                        out.push_str(&format!(" REPLICATE BY {}", render_opref(opref)))
                    }
                }
            }
        }
        Statement::Format(fmt) => {
            out.push_str("FORMAT ");
            out.push_str(&fmt.inputs.join(", "));
            for (clause, opref) in &fmt.clauses {
                let (kw1, kw2) = clause.keywords();
                out.push_str(&format!(" {kw1} {kw2} {}", render_opref(opref)));
            }
        }
        Statement::Store(store) => {
            out.push_str("STORE ");
            out.push_str(&store.inputs.join(", "));
            if let Some(locate) = &store.locate {
                out.push_str(&format!(" LOCATE USING {}", render_opref(locate)));
            }
            if let Some(upload) = &store.upload {
                out.push_str(&format!(" UPLOAD TO {}", render_opref(upload)));
            }
        }
    }
    out.push(';');
    out
}

fn render_stage(stage: &Stage) -> String {
    let mut out = if stage.upstreams.is_empty() {
        format!("CREATE STAGE {}", stage.name)
    } else {
        format!("CHAIN STAGE {} TO {}", stage.name, stage.upstreams.join(", "))
    };
    out.push_str(&format!(" USING {}", stage.statements.join(", ")));
    if !stage.predicates.is_empty() {
        let preds: Vec<String> = stage.predicates.iter().map(|p| p.render()).collect();
        out.push_str(&format!(" WHERE {}", preds.join(", ")));
    }
    out.push(';');
    out
}

/// Deterministic textual form of a plan; parseable by `parse_program`.
pub fn render_plan(plan: &IngestPlan) -> String {
    let mut lines = Vec::new();

    // Statements grouped by stage in topological order.
    let mut emitted: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for stage in &plan.stages {
        for stmt_name in &stage.statements {
            if let Some(a) = plan.program.assignments.iter().find(|a| &a.name == stmt_name) {
                if emitted.insert(stmt_name) {
                    lines.push(render_statement(&a.name, &a.stmt));
                }
            }
        }
    }
    for a in &plan.program.assignments {
        if emitted.insert(&a.name) {
            lines.push(render_statement(&a.name, &a.stmt));
        }
    }

    // Stage statements, unless the single stage is the implicit one.
    if !plan.program.stage_stmts.is_empty() {
        for stage in &plan.stages {
            lines.push(render_stage(stage));
        }
    }

    let mut out = lines.join("\n");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::compile::tests::{log_registry, LOG_PROGRAM};
    use crate::lang::compile::{compile_to_plan, CompileOptions};
    use crate::lang::parser::parse_program;

    fn compile(text: &str) -> IngestPlan {
        let program = parse_program(text).unwrap();
        compile_to_plan(&program, &log_registry(), &CompileOptions::default()).unwrap()
    }

    #[test]
    fn render_is_reparseable_and_a_fixpoint() {
        let plan = compile(LOG_PROGRAM);
        let text1 = render_plan(&plan);
        let plan2 = compile(&text1);
        let text2 = render_plan(&plan2);
        assert_eq!(text1, text2);
    }

    #[test]
    fn stage_without_predicates_omits_where() {
        let plan = compile(LOG_PROGRAM);
        let text = render_plan(&plan);
        let f_line = text
            .lines()
            .find(|l| l.starts_with("CHAIN STAGE f"))
            .unwrap();
        assert_eq!(f_line, "CHAIN STAGE f TO d, e USING s7;");
    }

    #[test]
    fn implicit_stage_renders_no_stage_statements() {
        let plan = compile("s1 = SELECT * FROM input USING parser;");
        let text = render_plan(&plan);
        assert_eq!(text, "s1 = SELECT * FROM input USING parser;\n");
    }
}
