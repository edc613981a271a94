//! GF(2^8) arithmetic with reducing polynomial x^8 + x^4 + x^3 + x^2 + 1
//! (0x11d), generator 2. Exp/log tables are built once at first use.

const POLY: u16 = 0x11d;

struct Tables {
    exp: [u8; 512],
    log: [u8; 256],
}

fn tables() -> &'static Tables {
    use std::sync::OnceLock;
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut exp = [0u8; 512];
        let mut log = [0u8; 256];
        let mut x: u16 = 1;
        for i in 0..255 {
            exp[i] = x as u8;
            log[x as usize] = i as u8;
            x <<= 1;
            if x & 0x100 != 0 {
                x ^= POLY;
            }
        }
        for i in 255..512 {
            exp[i] = exp[i - 255];
        }
        Tables { exp, log }
    })
}

pub fn add(a: u8, b: u8) -> u8 {
    a ^ b
}

pub fn mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        return 0;
    }
    let t = tables();
    t.exp[t.log[a as usize] as usize + t.log[b as usize] as usize]
}

pub fn inv(a: u8) -> u8 {
    assert!(a != 0, "zero has no inverse");
    let t = tables();
    t.exp[255 - t.log[a as usize] as usize]
}

pub fn div(a: u8, b: u8) -> u8 {
    if a == 0 {
        return 0;
    }
    mul(a, inv(b))
}

/// a^n by table lookup; 0^0 = 1.
pub fn pow(a: u8, n: usize) -> u8 {
    if n == 0 {
        return 1;
    }
    if a == 0 {
        return 0;
    }
    let t = tables();
    let e = (t.log[a as usize] as usize * n) % 255;
    t.exp[e]
}

/// Gauss-Jordan inversion of a square matrix; None when singular.
pub fn invert_matrix(m: &[Vec<u8>]) -> Option<Vec<Vec<u8>>> {
    let n = m.len();
    let mut a: Vec<Vec<u8>> = m.to_vec();
    let mut b: Vec<Vec<u8>> = (0..n)
        .map(|i| (0..n).map(|j| u8::from(i == j)).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&r| a[r][col] != 0)?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let scale = inv(a[col][col]);
        for j in 0..n {
            a[col][j] = mul(a[col][j], scale);
            b[col][j] = mul(b[col][j], scale);
        }
        for r in 0..n {
            if r != col && a[r][col] != 0 {
                let factor = a[r][col];
                for j in 0..n {
                    a[r][j] = add(a[r][j], mul(factor, a[col][j]));
                    b[r][j] = add(b[r][j], mul(factor, b[col][j]));
                }
            }
        }
    }
    Some(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_axioms_hold_exhaustively() {
        for a in 0..=255u8 {
            assert_eq!(mul(a, 1), a);
            assert_eq!(mul(a, 0), 0);
            if a != 0 {
                assert_eq!(mul(a, inv(a)), 1);
            }
            for b in 0..=255u8 {
                assert_eq!(mul(a, b), mul(b, a));
            }
        }
    }

    #[test]
    fn known_products() {
        // Reference values for polynomial 0x11d.
        assert_eq!(mul(2, 0x80), 0x1d);
        assert_eq!(pow(2, 8), 0x1d);
        assert_eq!(pow(2, 255), 1);
    }

    #[test]
    fn matrix_inversion_round_trip() {
        let m = vec![
            vec![1, 0, 0],
            vec![1, 1, 1],
            vec![1, 2, 4],
        ];
        let inv_m = invert_matrix(&m).unwrap();
        // m * inv(m) == identity
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0u8;
                for t in 0..3 {
                    acc = add(acc, mul(m[i][t], inv_m[t][j]));
                }
                assert_eq!(acc, u8::from(i == j));
            }
        }
    }

    #[test]
    fn singular_matrix_is_detected() {
        let m = vec![vec![1, 1], vec![1, 1]];
        assert!(invert_matrix(&m).is_none());
    }
}
