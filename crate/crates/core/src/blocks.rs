//! Column partitions and submanifold blocks.
//!
//! Fixing the columns outside an index set `C` leaves the block
//! `M_{X_{−C}} = { Y ∈ St(n,|C|) : X_{−C}ᵀY = 0 }` as the feasible set for the
//! columns in `C`. Every update of the randomized method moves two blocks of
//! a partition jointly inside such a submanifold, which keeps the whole
//! iterate on the Stiefel manifold without touching the other columns.
//!
//! Column indices are 0-based throughout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::flops::FlopCounter;
use crate::matrix::{self, DenseMatrix};
use crate::stiefel::StiefelPoint;

/// Lower bound on `σ_min((I − X_{−C}X_{−C}ᵀ)Ξ)` accepted by [`project_onto_block`].
pub const BLOCK_SIGMA_MIN: f64 = 1e-8;

/// An ordered disjoint cover `C_1, …, C_ℓ` of the column indices `0..p`, `ℓ ≥ 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    p: usize,
    #[serde(skip)]
    owner: Vec<usize>,
}

impl Partition {
    /// Validates that `blocks` is a partition of `0..p` into at least two nonempty sets.
    pub fn new(mut blocks: Vec<Vec<usize>>, p: usize) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(Error::Config(format!("a partition needs at least 2 blocks, got {}", blocks.len())));
        }
        let mut owner = vec![usize::MAX; p];
        for (b, block) in blocks.iter_mut().enumerate() {
            if block.is_empty() {
                return Err(Error::Config(format!("block {b} is empty")));
            }
            block.sort_unstable();
            for &c in block.iter() {
                if c >= p {
                    return Err(Error::Config(format!("column index {c} out of range for p = {p}")));
                }
                if owner[c] != usize::MAX {
                    return Err(Error::Config(format!("column {c} appears in more than one block")));
                }
                owner[c] = b;
            }
        }
        if let Some(missing) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::Config(format!("column {missing} is not covered by any block")));
        }
        Ok(Partition { blocks, p, owner })
    }

    /// Contiguous blocks whose sizes differ by at most one, larger blocks first.
    pub fn uniform(p: usize, ell: usize) -> Result<Self> {
        Self::check_ell(p, ell)?;
        Self::from_order(&(0..p).collect::<Vec<_>>(), ell)
    }

    /// Balanced blocks over a seeded random permutation of the columns.
    pub fn shuffled<R: Rng + ?Sized>(p: usize, ell: usize, rng: &mut R) -> Result<Self> {
        Self::check_ell(p, ell)?;
        let mut order: Vec<usize> = (0..p).collect();
        // Fisher–Yates
        for i in (1..p).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        Self::from_order(&order, ell)
    }

    fn check_ell(p: usize, ell: usize) -> Result<()> {
        if ell < 2 || ell > p {
            return Err(Error::Config(format!("need 2 ≤ ℓ ≤ p, got ℓ = {ell}, p = {p}")));
        }
        Ok(())
    }

    fn from_order(order: &[usize], ell: usize) -> Result<Self> {
        let p = order.len();
        let (base, extra) = (p / ell, p % ell);
        let mut blocks = Vec::with_capacity(ell);
        let mut start = 0;
        for b in 0..ell {
            let size = base + usize::from(b < extra);
            blocks.push(order[start..start + size].to_vec());
            start += size;
        }
        Self::new(blocks, p)
    }

    pub fn ell(&self) -> usize {
        self.blocks.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &[usize] {
        &self.blocks[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Index of the block containing column `c`.
    pub fn block_of(&self, c: usize) -> usize {
        if self.owner.len() == self.p {
            self.owner[c]
        } else {
            // deserialized without the lookup table
            self.blocks.iter().position(|b| b.contains(&c)).expect("partition covers every column")
        }
    }

    /// Number of unordered block pairs, `C(ℓ,2)`.
    pub fn pair_count(&self) -> usize {
        let l = self.ell();
        l * (l - 1) / 2
    }

    pub fn pair(&self, i: usize, j: usize) -> Result<BlockPair> {
        let l = self.ell();
        if i == j || i >= l || j >= l {
            return Err(Error::Config(format!("invalid block pair ({i}, {j}) for ℓ = {l}")));
        }
        let (i, j) = (i.min(j), i.max(j));
        let mut columns: Vec<usize> = self.blocks[i].iter().chain(&self.blocks[j]).copied().collect();
        columns.sort_unstable();
        let complement = (0..self.p).filter(|&c| self.block_of(c) != i && self.block_of(c) != j).collect();
        Ok(BlockPair { i, j, columns, complement })
    }

    /// All `C(ℓ,2)` pairs in lexicographic order.
    pub fn all_pairs(&self) -> Vec<BlockPair> {
        let l = self.ell();
        let mut out = Vec::with_capacity(self.pair_count());
        for i in 0..l {
            for j in i + 1..l {
                out.push(self.pair(i, j).expect("valid indices"));
            }
        }
        out
    }
}

/// Two distinct blocks `i < j` and their merged columns `C_ij = C_i ∪ C_j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPair {
    pub i: usize,
    pub j: usize,
    columns: Vec<usize>,
    complement: Vec<usize>,
}

impl BlockPair {
    /// `C_ij` in ascending order.
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    /// `[p] ∖ C_ij` in ascending order.
    pub fn complement(&self) -> &[usize] {
        &self.complement
    }

    pub fn p_ij(&self) -> usize {
        self.columns.len()
    }
}

/// Draws `{i, j}` uniformly from the `C(ℓ,2)` unordered pairs.
pub fn sample_pair<R: Rng + ?Sized>(partition: &Partition, rng: &mut R) -> BlockPair {
    let l = partition.ell();
    let mut r = rng.random_range(0..partition.pair_count());
    let mut i = 0;
    while r >= l - 1 - i {
        r -= l - 1 - i;
        i += 1;
    }
    partition.pair(i, i + 1 + r).expect("unranked pair is valid")
}

/// A tangent vector to the submanifold block of `pair` at `X_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTangent {
    pair: BlockPair,
    matrix: DenseMatrix,
}

impl BlockTangent {
    pub fn pair(&self) -> &BlockPair {
        &self.pair
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.matrix
    }

    pub fn zero(n: usize, pair: BlockPair) -> Self {
        let matrix = DenseMatrix::zeros(n, pair.p_ij());
        BlockTangent { pair, matrix }
    }

    pub fn norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// `(‖X_{−ij}ᵀξ‖_F, ‖sym(X_ijᵀξ)‖_F)`; both vanish for a valid block tangent.
    pub fn membership_violation(&self, x: &StiefelPoint) -> (f64, f64) {
        let outside = matrix::select_columns(x.matrix(), self.pair.complement());
        let off = matrix::mul_tn(&outside, &self.matrix).expect("conformable").norm();
        let inside = matrix::select_columns(x.matrix(), self.pair.columns());
        let s = matrix::sym(&matrix::mul_tn(&inside, &self.matrix).expect("conformable")).expect("square");
        (off, s.norm())
    }
}

fn check_block_shape(op: &'static str, x: &StiefelPoint, pair: &BlockPair, m: &DenseMatrix) -> Result<()> {
    if m.shape() != (x.n(), pair.p_ij()) {
        return dim_err(op, format!("expected {}×{}, got {:?}", x.n(), pair.p_ij(), m.shape()));
    }
    if pair.columns().len() + pair.complement().len() != x.p() {
        return dim_err(op, format!("pair does not partition the {} columns of X", x.p()));
    }
    Ok(())
}

/// Projection onto `T_{X_ij} M_{X_{−ij}}`, i.e. `X_ij·skew(X_ijᵀξ) + (I − XXᵀ)ξ`.
///
/// Computed without forming `I − XXᵀ`: `Y = Xᵀξ`, the rows `C_ij` of `Y`
/// are replaced by their symmetric part, and the result is `ξ − XY`.
/// Costs `O(n·p·p_ij)`.
pub fn block_tangent_project(
    x: &StiefelPoint,
    pair: &BlockPair,
    xi: &DenseMatrix,
    flops: &mut FlopCounter,
) -> Result<BlockTangent> {
    check_block_shape("block_tangent_project", x, pair, xi)?;
    let (n, p, pij) = (x.n(), x.p(), pair.p_ij());
    let mut y = matrix::mul_tn(x.matrix(), xi)?;
    flops.gemm(p, n, pij);
    let cols = pair.columns();
    for a in 0..pij {
        for b in a + 1..pij {
            let s = 0.5 * (y[(cols[a], b)] + y[(cols[b], a)]);
            y[(cols[a], b)] = s;
            y[(cols[b], a)] = s;
        }
    }
    flops.elementwise(pij * pij);
    let correction = matrix::mul(x.matrix(), &y)?;
    flops.gemm(n, p, pij);
    flops.elementwise(n * pij);
    Ok(BlockTangent {
        pair: pair.clone(),
        matrix: xi - correction,
    })
}

/// Nearest point of `M_{X_{−ij}}` to `Ξ`: `P_St((I − X_{−ij}X_{−ij}ᵀ)Ξ)`.
///
/// Fails with a singularity error when `σ_min((I − X_{−ij}X_{−ij}ᵀ)Ξ) < 1e-8`.
pub fn project_onto_block(x: &StiefelPoint, pair: &BlockPair, big_xi: &DenseMatrix) -> Result<DenseMatrix> {
    check_block_shape("project_onto_block", x, pair, big_xi)?;
    let outside = matrix::select_columns(x.matrix(), pair.complement());
    let reduced = big_xi - matrix::mul(&outside, &matrix::mul_tn(&outside, big_xi)?)?;
    let gram = matrix::mul_tn(&reduced, &reduced)?;
    let (values, _) = matrix::symmetric_eigen(&gram)?;
    let smallest = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smallest >= BLOCK_SIGMA_MIN * BLOCK_SIGMA_MIN) {
        return Err(Error::Singular {
            op: "project_onto_block",
            eigenvalue: smallest,
            floor: BLOCK_SIGMA_MIN * BLOCK_SIGMA_MIN,
        });
    }
    Ok(matrix::polar_project(&reduced)?.into_matrix())
}

/// Gram matrix `I + γ²·gᵀg` whose inverse square root completes a block step.
pub fn block_step_gram(g: &BlockTangent, gamma: f64, flops: &mut FlopCounter) -> Result<DenseMatrix> {
    let (n, pij) = g.matrix.shape();
    let gtg = matrix::mul_tn(&g.matrix, &g.matrix)?;
    flops.gemm(pij, n, pij);
    Ok(gtg * (gamma * gamma) + DenseMatrix::identity(pij, pij))
}

/// One update: columns `C_ij` become `P_St(X_ij − γ·g)`, the others are kept.
pub fn rssm_block_step(
    x: &StiefelPoint,
    g: &BlockTangent,
    gamma: f64,
    flops: &mut FlopCounter,
) -> Result<StiefelPoint> {
    let mut out = x.clone();
    rssm_block_step_in_place(&mut out, g, gamma, flops)?;
    Ok(out)
}

/// In-place form of [`rssm_block_step`].
///
/// In exact arithmetic `(X_ij − γg)ᵀ(X_ij − γg) = I + γ²gᵀg` because `X_ijᵀg`
/// is skew. The Gram matrix is formed from the moved block itself at the
/// same cost, so rounding errors do not accumulate across iterations, and
/// the polar factor is refined when a long step leaves it ill-conditioned.
/// The result is the nearest point of `M_{X_{−ij}}` to `X_ij − γg`.
pub fn rssm_block_step_in_place(
    x: &mut StiefelPoint,
    g: &BlockTangent,
    gamma: f64,
    flops: &mut FlopCounter,
) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("stepsize must be positive and finite, got {gamma}")));
    }
    check_block_shape("rssm_block_step", x, &g.pair, &g.matrix)?;
    if g.matrix.iter().all(|&v| v == 0.0) {
        return Ok(());
    }
    let (n, pij) = (x.n(), g.pair.p_ij());
    let cols = g.pair.columns();
    let mut moved = matrix::select_columns(x.matrix(), cols) - &g.matrix * gamma;
    flops.elementwise(2 * n * pij);
    // Removing the X_{−ij} component is a no-op in exact arithmetic. Without
    // it, long steps amplify any cross-term rounding geometrically.
    let rest = g.pair.complement();
    if !rest.is_empty() {
        let outside = matrix::select_columns(x.matrix(), rest);
        let coeffs = matrix::mul_tn(&outside, &moved)?;
        flops.gemm(rest.len(), n, pij);
        moved -= matrix::mul(&outside, &coeffs)?;
        flops.gemm(n, rest.len(), pij);
        flops.elementwise(n * pij);
    }
    let updated = matrix::polar_project_counted(&moved, flops)?.into_matrix();
    matrix::assign_columns(x.matrix_mut(), cols, &updated);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;
    use crate::stiefel::random_stiefel;
    use rand_distr::StandardNormal;

    fn gaussian(r: usize, c: usize, rng: &mut Rng64) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn uniform_partitions() {
        let p = Partition::uniform(6, 3).unwrap();
        assert_eq!(p.blocks(), &[vec![0, 1], vec![2, 3], vec![4, 5]]);
        let p = Partition::uniform(5, 2).unwrap();
        assert_eq!(p.blocks(), &[vec![0, 1, 2], vec![3, 4]]);
        let p = Partition::uniform(90, 10).unwrap();
        assert!(p.sizes().iter().all(|&s| s == 9));
        assert!(Partition::uniform(5, 1).is_err());
        assert!(Partition::uniform(5, 6).is_err());
    }

    #[test]
    fn balanced_sizes_bounded_by_ceiling() {
        for p in 2..30 {
            for ell in 2..=p {
                let part = Partition::uniform(p, ell).unwrap();
                let ceil = p.div_ceil(ell);
                let sizes = part.sizes();
                assert!(sizes.iter().all(|&s| s <= ceil));
                assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn invalid_partitions_are_rejected() {
        assert!(Partition::new(vec![vec![0, 1], vec![1, 2]], 3).is_err());
        assert!(Partition::new(vec![vec![0], vec![2]], 3).is_err());
        assert!(Partition::new(vec![vec![0, 1, 2]], 3).is_err());
        assert!(Partition::new(vec![vec![0, 1], vec![]], 2).is_err());
    }

    #[test]
    fn shuffled_partition_is_a_partition() {
        let mut rng = Rng64::from_seed_u64(1);
        let p = Partition::shuffled(11, 4, &mut rng).unwrap();
        let mut all: Vec<usize> = p.blocks().concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn pair_sampling_single_pair_and_support() {
        let mut rng = Rng64::from_seed_u64(2);
        let two = Partition::uniform(4, 2).unwrap();
        for _ in 0..50 {
            let pair = sample_pair(&two, &mut rng);
            assert_eq!((pair.i, pair.j), (0, 1));
        }
        let ten = Partition::uniform(20, 10).unwrap();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..10_000 {
            let pair = sample_pair(&ten, &mut rng);
            assert!(pair.i < pair.j);
            seen.insert((pair.i, pair.j));
        }
        assert_eq!(seen.len(), 45);
    }

    #[test]
    fn pair_sampling_is_uniform_for_three_blocks() {
        let mut rng = Rng64::from_seed_u64(3);
        let part = Partition::uniform(6, 3).unwrap();
        let mut counts = [0usize; 3];
        let draws = 100_000;
        for _ in 0..draws {
            let pair = sample_pair(&part, &mut rng);
            counts[pair.i + pair.j - 1] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn pair_columns_are_merged_and_sorted() {
        let part = Partition::new(vec![vec![4, 0], vec![1, 3], vec![2]], 5).unwrap();
        let pair = part.pair(2, 0).unwrap();
        assert_eq!((pair.i, pair.j), (0, 2));
        assert_eq!(pair.columns(), &[0, 2, 4]);
        assert_eq!(pair.complement(), &[1, 3]);
        assert_eq!(pair.p_ij(), 3);
    }

    #[test]
    fn block_tangent_simple_cases() {
        let mut rng = Rng64::from_seed_u64(4);
        let x = random_stiefel(8, 6, &mut rng).unwrap();
        let part = Partition::uniform(6, 3).unwrap();
        let pair = part.pair(0, 2).unwrap();
        let mut flops = FlopCounter::new();
        let xij = matrix::select_columns(x.matrix(), pair.columns());
        assert!(block_tangent_project(&x, &pair, &xij, &mut flops).unwrap().norm() < 1e-12);

        // columns orthogonal to span(X) pass through unchanged
        let raw = gaussian(8, 4, &mut rng);
        let perp = &raw - x.matrix() * matrix::mul_tn(x.matrix(), &raw).unwrap();
        let out = block_tangent_project(&x, &pair, &perp, &mut flops).unwrap();
        assert!((out.matrix() - &perp).amax() < 1e-12);
        assert!(flops.total() > 0);
    }

    #[test]
    fn block_tangent_recipe_matches_direct_formula() {
        let mut rng = Rng64::from_seed_u64(5);
        let x = random_stiefel(9, 7, &mut rng).unwrap();
        let part = Partition::uniform(7, 3).unwrap();
        for pair in part.all_pairs() {
            let xi = gaussian(9, pair.p_ij(), &mut rng);
            let fast = block_tangent_project(&x, &pair, &xi, &mut FlopCounter::new()).unwrap();
            let xij = matrix::select_columns(x.matrix(), pair.columns());
            let sk = matrix::skew(&(xij.transpose() * &xi)).unwrap();
            let direct = &xij * sk + (DenseMatrix::identity(9, 9) - x.matrix() * x.matrix().transpose()) * &xi;
            assert!((fast.matrix() - direct).amax() < 1e-10);
            let (off, s) = fast.membership_violation(&x);
            assert!(off < 1e-10 && s < 1e-10);
        }
    }

    #[test]
    fn block_projection_fixed_point_and_orthogonal_case() {
        let mut rng = Rng64::from_seed_u64(6);
        let x = random_stiefel(6, 4, &mut rng).unwrap();
        let part = Partition::uniform(4, 2).unwrap();
        let pair = part.pair(0, 1).unwrap();
        let xij = matrix::select_columns(x.matrix(), pair.columns());
        let fixed = project_onto_block(&x, &pair, &xij).unwrap();
        assert!((fixed - &xij).amax() < 1e-12);

        let part = Partition::uniform(4, 4).unwrap();
        let pair = part.pair(1, 3).unwrap();
        let outside = matrix::select_columns(x.matrix(), pair.complement());
        let raw = gaussian(6, 2, &mut rng);
        let orth = &raw - &outside * matrix::mul_tn(&outside, &raw).unwrap();
        let projected = project_onto_block(&x, &pair, &orth).unwrap();
        let polar = matrix::polar_project(&orth).unwrap();
        assert!((projected - polar.matrix()).amax() < 1e-12);
    }

    #[test]
    fn block_projection_rejects_degenerate_input() {
        let mut rng = Rng64::from_seed_u64(7);
        let x = random_stiefel(6, 4, &mut rng).unwrap();
        let part = Partition::uniform(4, 4).unwrap();
        let pair = part.pair(0, 1).unwrap();
        // lies entirely in span(X_{−ij})
        let inside = matrix::select_columns(x.matrix(), pair.complement());
        assert!(matches!(
            project_onto_block(&x, &pair, &inside),
            Err(Error::Singular { op: "project_onto_block", .. })
        ));
    }

    #[test]
    fn block_step_simple_and_gram_identity() {
        let mut rng = Rng64::from_seed_u64(8);
        let x = random_stiefel(10, 6, &mut rng).unwrap();
        let part = Partition::uniform(6, 3).unwrap();
        let pair = part.pair(1, 2).unwrap();
        let mut flops = FlopCounter::new();
        let zero = BlockTangent::zero(10, pair.clone());
        let same = rssm_block_step(&x, &zero, 0.3, &mut flops).unwrap();
        assert_eq!(same.matrix(), x.matrix());

        let g = block_tangent_project(&x, &pair, &gaussian(10, 4, &mut rng), &mut flops).unwrap();
        let gamma = 0.2;
        let moved = matrix::select_columns(x.matrix(), pair.columns()) - g.matrix() * gamma;
        let direct = moved.transpose() * &moved;
        let short = block_step_gram(&g, gamma, &mut flops).unwrap();
        assert!((direct - short).amax() < 1e-12);

        let next = rssm_block_step(&x, &g, gamma, &mut flops).unwrap();
        assert!(next.feasibility_violation() < 1e-10);
        for c in pair.complement() {
            assert_eq!(next.matrix().column(*c), x.matrix().column(*c));
        }
        assert!(rssm_block_step(&x, &g, 0.0, &mut flops).is_err());
        assert!(rssm_block_step(&x, &g, f64::NAN, &mut flops).is_err());
    }

    #[test]
    fn block_step_displacement_bound() {
        let mut rng = Rng64::from_seed_u64(9);
        let part = Partition::uniform(5, 3).unwrap();
        for _ in 0..50 {
            let x = random_stiefel(9, 5, &mut rng).unwrap();
            let pair = sample_pair(&part, &mut rng);
            let g = block_tangent_project(&x, &pair, &gaussian(9, pair.p_ij(), &mut rng), &mut FlopCounter::new())
                .unwrap();
            let gamma = 0.5 / g.norm().max(1e-12) * rng.random::<f64>();
            let next = rssm_block_step(&x, &g, gamma, &mut FlopCounter::new()).unwrap();
            let disp = (matrix::select_columns(next.matrix(), pair.columns())
                - matrix::select_columns(x.matrix(), pair.columns()))
            .norm();
            let gn = gamma * g.norm();
            assert!(disp <= gn + gn * gn + 1e-12);
        }
    }
}
