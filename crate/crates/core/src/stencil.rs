//! Serial reference for the XOR stencil fixtures.
//!
//! The fixture programs fill an `N x N` grid from a 64-bit LCG, apply the
//! four-neighbour rule (a cell becomes 1 iff exactly one neighbour is 1) and
//! print a single checksum line. This module reproduces that line so run
//! cases can be generated without a compiler.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub const LCG_MUL: u64 = 6364136223846793005;
pub const LCG_INC: u64 = 1442695040888963407;

/// Row-major input grid of 0/1 cells drawn from the fixture LCG.
pub fn lcg_grid(n: usize, seed: u64) -> Vec<u8> {
    let mut state = seed;
    (0..n * n)
        .map(|_| {
            state = state.wrapping_mul(LCG_MUL).wrapping_add(LCG_INC);
            ((state >> 33) & 1) as u8
        })
        .collect()
}

/// One step of the stencil over a row-major `n x n` grid.
pub fn cells_xor(input: &[u8], n: usize) -> Vec<u8> {
    assert_eq!(input.len(), n * n, "grid must be n*n");
    let at = |i: usize, j: usize| input[i * n + j] == 1;
    let mut out = alloc::vec![0u8; n * n];
    for i in 0..n {
        for j in 0..n {
            let count = [
                i > 0 && at(i - 1, j),
                i + 1 < n && at(i + 1, j),
                j > 0 && at(i, j - 1),
                j + 1 < n && at(i, j + 1),
            ]
            .iter()
            .filter(|&&b| b)
            .count();
            out[i * n + j] = (count == 1) as u8;
        }
    }
    out
}

/// `h = h * 31 + cell + 1` over the cells in row-major order, wrapping.
pub fn grid_hash(grid: &[u8]) -> u64 {
    grid.iter().fold(0u64, |h, &c| h.wrapping_mul(31).wrapping_add(c as u64 + 1))
}

pub fn checksum_line(n: usize, output: &[u8]) -> String {
    let ones = output.iter().filter(|&&c| c == 1).count();
    format!("checksum N={n} ones={ones} hash={:016x}", grid_hash(output))
}

/// The line a correct fixture program prints for `N` and `seed`.
pub fn generate_reference_output(n: usize, seed: u64) -> String {
    assert!(n >= 1, "grid size must be positive");
    checksum_line(n, &cells_xor(&lcg_grid(n, seed), n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_cell_has_no_neighbours() {
        assert_eq!(cells_xor(&[1], 1), vec![0]);
    }

    #[test]
    fn two_by_two_hand_evaluation() {
        assert_eq!(cells_xor(&[1, 0, 0, 0], 2), vec![0, 1, 1, 0]);
    }

    #[test]
    fn lcg_first_values() {
        // state1 = 1 * MUL + INC
        let s1 = LCG_MUL.wrapping_add(LCG_INC);
        assert_eq!(lcg_grid(1, 1), vec![((s1 >> 33) & 1) as u8]);
    }

    #[test]
    fn checksum_format() {
        let line = checksum_line(2, &[0, 1, 1, 0]);
        // ((1 * 31 + 2) * 31 + 2) * 31 + 1 = 31776
        assert_eq!(line, format!("checksum N=2 ones=2 hash={:016x}", 31776u64));
    }
}
