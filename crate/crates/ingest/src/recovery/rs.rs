//! Systematic Reed-Solomon erasure code over GF(2^8).
//!
//! The generator matrix is the (k+m) x k Vandermonde matrix V[r][c] = r^c
//! right-multiplied by the inverse of its top k x k block, which leaves the
//! top k rows an identity (data blocks stored verbatim) while preserving the
//! MDS property: any k rows remain invertible, so any k surviving blocks
//! reconstruct the stripe bit-exactly.

use thiserror::Error;

use super::gf256;

#[derive(Debug, Error)]
pub enum RsError {
    #[error("field bound exceeded: k + m = {0} > 255")]
    FieldBound(usize),
    #[error("too few blocks: have {have}, need {need}")]
    TooFewBlocks { have: usize, need: usize },
    #[error("inconsistent stripe: {0}")]
    InconsistentStripe(String),
}

/// Parity rows of the systematic generator (m rows of k coefficients).
pub fn parity_rows(k: usize, m: usize) -> Result<Vec<Vec<u8>>, RsError> {
    let n = k + m;
    if n > 255 {
        return Err(RsError::FieldBound(n));
    }
    let vandermonde: Vec<Vec<u8>> = (0..n)
        .map(|r| (0..k).map(|c| gf256::pow(r as u8, c)).collect())
        .collect();
    let top: Vec<Vec<u8>> = vandermonde[..k].to_vec();
    let inv = gf256::invert_matrix(&top)
        .expect("vandermonde top block is always invertible");
    let mut rows = Vec::with_capacity(m);
    for r in k..n {
        let mut row = vec![0u8; k];
        for (c, cell) in row.iter_mut().enumerate() {
            let mut acc = 0u8;
            for t in 0..k {
                acc = gf256::add(acc, gf256::mul(vandermonde[r][t], inv[t][c]));
            }
            *cell = acc;
        }
        rows.push(row);
    }
    Ok(rows)
}

fn full_generator(k: usize, m: usize) -> Result<Vec<Vec<u8>>, RsError> {
    let mut g: Vec<Vec<u8>> = (0..k)
        .map(|i| (0..k).map(|j| u8::from(i == j)).collect())
        .collect();
    g.extend(parity_rows(k, m)?);
    Ok(g)
}

/// Encodes k equal-length data blocks into m parity blocks.
pub fn rs_encode(data: &[Vec<u8>], m: usize) -> Result<Vec<Vec<u8>>, RsError> {
    let k = data.len();
    if k == 0 {
        return Err(RsError::InconsistentStripe("no data blocks".into()));
    }
    if k + m > 255 {
        return Err(RsError::FieldBound(k + m));
    }
    let len = data[0].len();
    if data.iter().any(|b| b.len() != len) {
        return Err(RsError::InconsistentStripe(
            "data blocks have different lengths".into(),
        ));
    }
    let rows = parity_rows(k, m)?;
    let mut parity = vec![vec![0u8; len]; m];
    for (p, row) in parity.iter_mut().zip(&rows) {
        for (j, &coeff) in row.iter().enumerate() {
            if coeff == 0 {
                continue;
            }
            for (out, &b) in p.iter_mut().zip(&data[j]) {
                *out = gf256::add(*out, gf256::mul(coeff, b));
            }
        }
    }
    Ok(parity)
}

/// Reconstructs the full stripe (k data blocks then m parity blocks) from
/// any >= k available members, given as (stripe index, bytes).
pub fn rs_decode(
    k: usize,
    m: usize,
    available: &[(usize, Vec<u8>)],
) -> Result<Vec<Vec<u8>>, RsError> {
    if k + m > 255 {
        return Err(RsError::FieldBound(k + m));
    }
    if available.len() < k {
        return Err(RsError::TooFewBlocks {
            have: available.len(),
            need: k,
        });
    }
    let len = available[0].1.len();
    if available.iter().any(|(_, b)| b.len() != len) {
        return Err(RsError::InconsistentStripe(
            "available blocks have different lengths".into(),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    for (idx, _) in available {
        if *idx >= k + m {
            return Err(RsError::InconsistentStripe(format!(
                "block index {idx} outside stripe of {}",
                k + m
            )));
        }
        if !seen.insert(*idx) {
            return Err(RsError::InconsistentStripe(format!(
                "duplicate block index {idx}"
            )));
        }
    }
    let generator = full_generator(k, m)?;

    // Solve for the data blocks from the first k survivors (sorted).
    let mut chosen: Vec<&(usize, Vec<u8>)> = available.iter().collect();
    chosen.sort_by_key(|(idx, _)| *idx);
    chosen.truncate(k);
    let sub: Vec<Vec<u8>> = chosen.iter().map(|(idx, _)| generator[*idx].clone()).collect();
    let inv = gf256::invert_matrix(&sub).ok_or_else(|| {
        RsError::InconsistentStripe("survivor rows are singular".into())
    })?;

    let mut data = vec![vec![0u8; len]; k];
    for (i, row) in inv.iter().enumerate() {
        for (j, &coeff) in row.iter().enumerate() {
            if coeff == 0 {
                continue;
            }
            let src = &chosen[j].1;
            for (out, &b) in data[i].iter_mut().zip(src) {
                *out = gf256::add(*out, gf256::mul(coeff, b));
            }
        }
    }

    let parity = rs_encode(&data, m)?;
    let mut stripe = data;
    stripe.extend(parity);

    // Anything the caller already had must match what we rebuilt.
    for (idx, bytes) in available {
        if &stripe[*idx] != bytes {
            return Err(RsError::InconsistentStripe(format!(
                "block {idx} disagrees with reconstruction"
            )));
        }
    }
    Ok(stripe)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded_blocks(k: usize, len: usize, seed: u64) -> Vec<Vec<u8>> {
        let mut state = seed | 1;
        (0..k)
            .map(|_| {
                (0..len)
                    .map(|_| {
                        state ^= state << 13;
                        state ^= state >> 7;
                        state ^= state << 17;
                        (state >> 24) as u8
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn k1_parity_equals_data() {
        // Every parity row of the k=1 generator is [1].
        let data = vec![vec![1, 2, 3, 4]];
        let parity = rs_encode(&data, 1).unwrap();
        assert_eq!(parity[0], data[0]);
        let rows = parity_rows(1, 3).unwrap();
        assert!(rows.iter().all(|r| r == &vec![1u8]));
    }

    #[test]
    fn all_zero_data_gives_all_zero_parity() {
        let data = vec![vec![0u8; 64]; 5];
        let parity = rs_encode(&data, 3).unwrap();
        assert!(parity.iter().all(|p| p.iter().all(|&b| b == 0)));
    }

    #[test]
    fn zero_erasures_round_trip() {
        let data = seeded_blocks(4, 128, 9);
        let parity = rs_encode(&data, 2).unwrap();
        let mut stripe = data.clone();
        stripe.extend(parity);
        let available: Vec<(usize, Vec<u8>)> =
            stripe.iter().cloned().enumerate().collect();
        let rebuilt = rs_decode(4, 2, &available).unwrap();
        assert_eq!(rebuilt, stripe);
    }

    #[test]
    fn field_bound_enforced() {
        assert!(matches!(
            rs_encode(&seeded_blocks(200, 4, 1), 60),
            Err(RsError::FieldBound(260))
        ));
    }

    #[test]
    fn too_few_blocks_is_information_theoretic() {
        let data = seeded_blocks(10, 32, 5);
        let parity = rs_encode(&data, 3).unwrap();
        let mut stripe = data;
        stripe.extend(parity);
        // Keep only 9 of 13: under k.
        let available: Vec<(usize, Vec<u8>)> = stripe
            .iter()
            .cloned()
            .enumerate()
            .take(9)
            .collect();
        assert!(matches!(
            rs_decode(10, 3, &available),
            Err(RsError::TooFewBlocks { have: 9, need: 10 })
        ));
    }

    /// MDS at desk scale: for (5,3) and (10,3) every erasure pattern of
    /// size <= m decodes bit-exactly.
    #[test]
    fn exhaustive_erasure_patterns() {
        for (k, m) in [(5usize, 3usize), (10, 3)] {
            let data = seeded_blocks(k, 256, (k * 31 + m) as u64);
            let parity = rs_encode(&data, m).unwrap();
            let mut stripe = data;
            stripe.extend(parity);
            let n = k + m;
            // All subsets of erased indexes with |e| = m (covers smaller
            // patterns implicitly: more survivors only helps).
            let mut erased = vec![0usize; m];
            fn patterns(
                n: usize,
                m: usize,
                start: usize,
                depth: usize,
                erased: &mut Vec<usize>,
                stripe: &[Vec<u8>],
                k: usize,
            ) -> usize {
                if depth == m {
                    let available: Vec<(usize, Vec<u8>)> = (0..n)
                        .filter(|i| !erased.contains(i))
                        .map(|i| (i, stripe[i].clone()))
                        .collect();
                    let rebuilt = rs_decode(k, m, &available).unwrap();
                    assert_eq!(rebuilt.len(), n);
                    for i in 0..n {
                        assert_eq!(rebuilt[i], stripe[i], "k={k} m={m} erased={erased:?}");
                    }
                    return 1;
                }
                let mut count = 0;
                for i in start..n {
                    erased[depth] = i;
                    count += patterns(n, m, i + 1, depth + 1, erased, stripe, k);
                }
                count
            }
            let count = patterns(n, m, 0, 0, &mut erased, &stripe, k);
            // C(8,3) = 56 and C(13,3) = 286.
            let expected = if k == 5 { 56 } else { 286 };
            assert_eq!(count, expected);
        }
    }
}
