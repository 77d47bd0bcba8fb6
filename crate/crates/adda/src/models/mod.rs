//! Model kernels: the conditional draws each model plugs into the engine.

pub mod lasso;
pub mod lme;
pub mod logistic;

use crate::error::{Error, Result};

/// Check that `partition` assigns every index in `0..n` to exactly one
/// worker shard.
pub(crate) fn validate_partition(partition: &[Vec<usize>], n: usize, what: &str) -> Result<()> {
    if partition.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{what}: partition has no shards"
        )));
    }
    let mut seen = vec![false; n];
    for shard in partition {
        for &idx in shard {
            if idx >= n {
                return Err(Error::InvalidConfig(format!(
                    "{what}: partition index {idx} out of range for {n} items"
                )));
            }
            if seen[idx] {
                return Err(Error::InvalidConfig(format!(
                    "{what}: partition assigns item {idx} twice"
                )));
            }
            seen[idx] = true;
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::InvalidConfig(format!(
            "{what}: partition misses item {missing}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_must_cover_exactly() {
        assert!(validate_partition(&[vec![0, 2], vec![1]], 3, "t").is_ok());
        assert!(validate_partition(&[], 0, "t").is_err());
        assert!(validate_partition(&[vec![0], vec![0]], 1, "t").is_err());
        assert!(validate_partition(&[vec![0]], 2, "t").is_err());
        assert!(validate_partition(&[vec![0, 3]], 3, "t").is_err());
        // empty shards are fine as long as coverage holds
        assert!(validate_partition(&[vec![0, 1], vec![]], 2, "t").is_ok());
    }
}
