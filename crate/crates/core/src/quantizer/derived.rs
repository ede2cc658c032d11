//! Index packing that makes a derived codebook addressable by the low bits
//! of full-codebook indexes.

use super::Codebook;
use crate::error::{Error, Result};

/// `index mod 2^bits`.
#[inline]
pub fn low_bits(index: u32, bits: u32) -> u32 {
    if bits >= 32 {
        index
    } else {
        index & ((1u32 << bits) - 1)
    }
}

/// Final-codebook layout for a balanced partition of `2^derived_bits`
/// groups: member `p` of group `l` goes to index `(p << derived_bits) | l`.
///
/// Returns, for every final index, the index of the centroid in the
/// partitioned (temporary) codebook.
pub fn final_order(partition: &[Vec<u32>], derived_bits: u32) -> Result<Vec<u32>> {
    let groups = 1usize << derived_bits;
    if partition.len() != groups {
        return Err(Error::domain(format!(
            "{} groups given for {derived_bits} derived bits",
            partition.len()
        )));
    }
    let size = partition[0].len();
    if size == 0 || partition.iter().any(|g| g.len() != size) {
        return Err(Error::domain("partition groups are not of equal size"));
    }
    let k = size * groups;
    let mut order = vec![u32::MAX; k];
    let mut seen = vec![false; k];
    for (l, group) in partition.iter().enumerate() {
        for (pos, &member) in group.iter().enumerate() {
            let m = member as usize;
            if m >= k || seen[m] {
                return Err(Error::domain(format!(
                    "partition is not a partition of 0..{k} (member {member})"
                )));
            }
            seen[m] = true;
            order[(pos << derived_bits) | l] = member;
        }
    }
    Ok(order)
}

/// Reorder `temp` so that the low `derived_bits` bits of every centroid
/// index equal the id of the partition group holding that centroid.
pub fn build_final_codebook(
    temp: &Codebook,
    partition: &[Vec<u32>],
    derived_bits: u32,
) -> Result<Codebook> {
    let order = final_order(partition, derived_bits)?;
    if order.len() != temp.k() {
        return Err(Error::domain(format!(
            "partition covers {} centroids, codebook has {}",
            order.len(),
            temp.k()
        )));
    }
    Ok(temp.permuted(&order))
}
