use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

fn choose(n: u64, k: u64) -> BigUint {
    let mut r = BigUint::one();
    for i in 0..k {
        r = r * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    r
}

/// Two-sided exact McNemar p-value as an exact fraction: twice the lower
/// binomial tail at 1/2, capped at 1.
pub fn mcnemar_exact_rational(b: u64, c: u64) -> BigRational {
    let n = b + c;
    if n == 0 {
        return BigRational::one();
    }
    let m = b.min(c);
    let tail: BigUint = (0..=m).map(|i| choose(n, i)).sum();
    let p = BigRational::new((tail * 2u32).into(), (BigUint::one() << n as usize).into());
    p.min(BigRational::one())
}

pub fn mcnemar_exact(b: u64, c: u64) -> f64 {
    mcnemar_exact_rational(b, c).to_f64().expect("finite")
}

/// Cohen's kappa by the textbook formula over exact fractions.
/// `None` when chance agreement is 1.
pub fn cohen_kappa(matrix: &[Vec<u64>]) -> Option<(f64, f64)> {
    let k = matrix.len();
    let n: u64 = matrix.iter().flatten().sum();
    if n == 0 {
        return None;
    }
    let frac = |a: u64, b: u64| BigRational::new(a.into(), b.into());
    let mut po = BigRational::zero();
    for i in 0..k {
        po += frac(matrix[i][i], n);
    }
    let mut pe = BigRational::zero();
    for i in 0..k {
        let row: u64 = matrix[i].iter().sum();
        let col: u64 = matrix.iter().map(|r| r[i]).sum();
        pe += frac(row, n) * frac(col, n);
    }
    let agreement = po.to_f64()?;
    if pe.is_one() {
        return None;
    }
    let kappa = (po - pe.clone()) / (BigRational::one() - pe);
    Some((kappa.to_f64()?, agreement))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(mcnemar_exact(10, 6), 29786.0 / 65536.0);
        assert_eq!(mcnemar_exact(0, 0), 1.0);
        assert_eq!(mcnemar_exact(3, 3), 1.0);
        let (k, a) = cohen_kappa(&[vec![20, 5], vec![10, 15]]).unwrap();
        assert!((a - 0.7).abs() < 1e-12);
        assert!((k - 0.4).abs() < 1e-12);
    }
}
