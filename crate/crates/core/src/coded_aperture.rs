//! Modified uniformly redundant arrays (MURAs) built from quadratic residues.
//!
//! Index 0 is not treated as a quadratic residue, so entry 0 of every prime-length
//! sequence is −1. Length 1 is accepted as the unstructured "1-MURA" (a single +1).

use ndarray::Array2;

use crate::error::{invalid, Result};

fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Whether `i` is a nonzero square modulo the prime `length`, by exhaustive squaring.
pub fn is_quadratic_residue(i: usize, length: usize) -> Result<bool> {
    if !is_prime(length) {
        return Err(invalid(format!("modulus {length} is not prime")));
    }
    if i >= length {
        return Err(invalid(format!("index {i} outside [0, {length})")));
    }
    Ok(residue_table(length)[i])
}

// x and L−x square to the same value, so scanning x up to (L−1)/2 covers every residue.
fn residue_table(length: usize) -> Vec<bool> {
    let mut table = vec![false; length];
    for x in 1..=length / 2 {
        table[(x * x) % length] = true;
    }
    table[0] = false;
    table
}

/// Whether `length` admits a MURA: 1, or a prime congruent to 1 mod 4.
pub fn is_valid_mura_length(length: usize) -> bool {
    length == 1 || (length % 4 == 1 && is_prime(length))
}

fn check_length(length: usize) -> Result<()> {
    if length == 1 {
        return Ok(());
    }
    if !is_prime(length) {
        return Err(invalid(format!(
            "MURA length {length} must be 1 or a prime (it is not prime)"
        )));
    }
    if length % 4 != 1 {
        return Err(invalid(format!(
            "MURA length {length} must satisfy L ≡ 1 (mod 4) (it is {} mod 4)",
            length % 4
        )));
    }
    Ok(())
}

/// A ±1 sequence of valid MURA length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MuraSequence {
    values: Vec<i8>,
}

impl MuraSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn count_positive(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0).count()
    }
}

/// Outer product of a [`MuraSequence`] with itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MuraArray {
    values: Array2<i8>,
}

impl MuraArray {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Array2<i8> {
        &self.values
    }
}

pub fn mura_1d(length: usize) -> Result<MuraSequence> {
    check_length(length)?;
    if length == 1 {
        return Ok(MuraSequence { values: vec![1] });
    }
    let table = residue_table(length);
    let values = table.into_iter().map(|qr| if qr { 1 } else { -1 }).collect();
    Ok(MuraSequence { values })
}

pub fn mura_2d(length: usize) -> Result<MuraArray> {
    let seq = mura_1d(length)?;
    let s = seq.values();
    let values = Array2::from_shape_fn((length, length), |(i, j)| s[i] * s[j]);
    Ok(MuraArray { values })
}

/// `[1]` followed by every prime `p ≤ max_length` with `p ≡ 1 (mod 4)`.
pub fn valid_mura_lengths(max_length: usize) -> Vec<usize> {
    std::iter::once(1)
        .chain((5..=max_length).filter(|&p| p % 4 == 1 && is_prime(p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residue_examples() {
        assert!(is_quadratic_residue(1, 5).unwrap());
        assert!(!is_quadratic_residue(2, 5).unwrap());
        assert!(!is_quadratic_residue(0, 5).unwrap());
    }

    #[test]
    fn residue_errors() {
        assert!(is_quadratic_residue(1, 9).is_err());
        assert!(is_quadratic_residue(5, 5).is_err());
        assert!(is_quadratic_residue(0, 1).is_err());
    }

    #[test]
    fn sequence_examples() {
        assert_eq!(mura_1d(5).unwrap().values(), &[-1, 1, -1, -1, 1]);
        assert_eq!(mura_1d(1).unwrap().values(), &[1]);
        assert_eq!(mura_1d(13).unwrap().count_positive(), 6);
    }

    #[test]
    fn invalid_lengths_name_the_condition() {
        let msg = mura_1d(21).unwrap_err().to_string();
        assert!(msg.contains("not prime"), "{msg}");
        let msg = mura_1d(7).unwrap_err().to_string();
        assert!(msg.contains("mod 4"), "{msg}");
        assert!(mura_1d(0).is_err());
        assert!(mura_2d(3).is_err());
    }

    #[test]
    fn array_examples() {
        assert_eq!(mura_2d(1).unwrap().values()[(0, 0)], 1);
        let a = mura_2d(5).unwrap();
        assert_eq!(a.values()[(1, 4)], 1);
        assert_eq!(a.values(), &a.values().t());
    }

    #[test]
    fn lengths() {
        assert_eq!(valid_mura_lengths(17), vec![1, 5, 13, 17]);
        assert_eq!(valid_mura_lengths(1), vec![1]);
        assert_eq!(valid_mura_lengths(41), vec![1, 5, 13, 17, 29, 37, 41]);
    }
}
