//! Rank selection by k-fold cross-validation over halving grids.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::solver::{
    fit, initial_output_bases, input_bases, input_projection, response_subspaces, run_engine, Dataset, FitConfig,
    MtotModel, Projection,
};
use crate::tensor::Tensor;

/// Number of singular values above `σ_max · max(m, n) · ε`.
pub fn numerical_rank(m: &Matrix) -> Result<usize> {
    let s = m.singular_values()?;
    let Some(&smax) = s.first() else { return Ok(0) };
    let tol = smax * m.rows().max(m.cols()) as f64 * f64::EPSILON;
    Ok(s.iter().filter(|&&v| v > tol).count())
}

/// `{1} ∪ {⌈r / 2^t⌉ : t = 0..=⌊log₂ r⌋}`, ascending. `r = 0` gives `{1}`.
pub fn build_grid(r: usize) -> Vec<usize> {
    let mut grid = vec![1];
    if r > 0 {
        let mut t = 0;
        while (1usize << t) <= r {
            grid.push(r.div_ceil(1 << t));
            t += 1;
        }
    }
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// Candidate ranks for every input and for the output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankGrid {
    pub inputs: Vec<Vec<usize>>,
    pub output: Vec<usize>,
    /// Ranks the input ladders were built from.
    pub input_sources: Vec<usize>,
    pub output_source: usize,
}

impl RankGrid {
    /// Ladders built from the smallest unfolding rank over each tensor's
    /// non-sample modes.
    pub fn from_data(data: &Dataset) -> Result<Self> {
        let input_sources: Vec<usize> = data.xs.iter().map(min_unfolding_rank).collect::<Result<_>>()?;
        let output_source = min_unfolding_rank(&data.y)?;
        Ok(RankGrid {
            inputs: input_sources.iter().map(|&r| build_grid(r)).collect(),
            output: build_grid(output_source),
            input_sources,
            output_source,
        })
    }

    /// A grid holding exactly one tuple.
    pub fn single(input_ranks: &[usize], output_rank: usize) -> Self {
        RankGrid {
            inputs: input_ranks.iter().map(|&r| vec![r]).collect(),
            output: vec![output_rank],
            input_sources: input_ranks.to_vec(),
            output_source: output_rank,
        }
    }

    /// Every combination, input ranks first and the output rank last, in
    /// lexicographic order.
    pub fn tuples(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = vec![Vec::new()];
        for set in self.inputs.iter().chain(std::iter::once(&self.output)) {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    set.iter().map(move |&r| {
                        let mut t = prefix.clone();
                        t.push(r);
                        t
                    })
                })
                .collect();
        }
        out
    }
}

fn min_unfolding_rank(t: &Tensor) -> Result<usize> {
    let mut best = usize::MAX;
    for k in 1..t.order() {
        best = best.min(numerical_rank(&t.unfold(k)?)?);
    }
    Ok(best)
}

/// Fold index of every sample: a seeded shuffle dealt round-robin.
pub fn fold_assignment(m: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng::stream(seed, &[0x666f_6c64]));
    let mut fold = vec![0; m];
    for (pos, &sample) in perm.iter().enumerate() {
        fold[sample] = pos % k;
    }
    fold
}

#[derive(Clone, Debug, PartialEq)]
pub struct TupleScore {
    /// Input ranks followed by the output rank.
    pub ranks: Vec<usize>,
    /// Held-out squared error per held-out entry.
    pub mean_rss: f64,
    pub folds_used: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub scores: Vec<TupleScore>,
    /// Tuples that could not be fitted on some fold, with the reason.
    pub skipped: Vec<(Vec<usize>, String)>,
    pub chosen: Vec<usize>,
    pub seed: u64,
    pub folds: usize,
}

impl CvReport {
    /// `base` with the selected ranks.
    pub fn chosen_config(&self, base: &FitConfig) -> FitConfig {
        let (out, inputs) = self.chosen.split_last().expect("tuple has an output rank");
        let mut c = base.clone();
        c.input_ranks = inputs.to_vec();
        c.output_rank = *out;
        c
    }

    pub fn to_csv(&self) -> String {
        let p = self.chosen.len() - 1;
        let mut s = String::new();
        for j in 1..=p {
            let _ = write!(s, "rank_x{j},");
        }
        s.push_str("rank_y,mean_rss,folds_used\n");
        for score in &self.scores {
            for r in &score.ranks {
                let _ = write!(s, "{r},");
            }
            let _ = writeln!(s, "{:e},{}", score.mean_rss, score.folds_used);
        }
        s
    }
}

/// Parameters estimated for a rank tuple: core entries plus output bases.
pub fn parameter_count(data: &Dataset, ranks: &[usize]) -> usize {
    let (&q, inputs) = ranks.split_last().expect("non-empty tuple");
    let d = data.output_shape().len();
    let core: usize = inputs
        .iter()
        .enumerate()
        .map(|(j, &r)| r.pow(data.input_shape(j).len() as u32) * q.pow(d as u32))
        .sum();
    core + data.output_shape().iter().map(|&n| n * q).sum::<usize>()
}

struct FoldCache {
    train_y: Tensor,
    test_y: Tensor,
    /// Per input, per candidate rank: training projection and test `Z`.
    inputs: Vec<Vec<(Option<Projection>, Matrix, usize)>>,
    v_full: Vec<Matrix>,
}

impl FoldCache {
    fn build(train: &Dataset, test: &Dataset, grid: &RankGrid, base: &FitConfig) -> Result<Self> {
        let mut inputs = Vec::with_capacity(train.xs.len());
        for (j, ranks) in grid.inputs.iter().enumerate() {
            let bound = train.input_shape(j).iter().copied().min().unwrap_or(0);
            let max_r = ranks.iter().copied().filter(|&r| r <= bound).max().unwrap_or(0);
            let full = if max_r > 0 {
                input_bases(&train.xs[j], max_r, base.input_basis)?
            } else {
                Vec::new()
            };
            let mut per_rank = Vec::with_capacity(ranks.len());
            for &r in ranks {
                if r == 0 || r > max_r {
                    per_rank.push((None, Matrix::zeros(0, 0), 0));
                    continue;
                }
                let u: Vec<Matrix> = full.iter().map(|f| f.leading_columns(r)).collect();
                let z_train = input_projection(&train.xs[j], &u)?;
                let z_test = input_projection(&test.xs[j], &u)?;
                let cols = z_train.cols();
                per_rank.push((Projection::new(&z_train, &train.y)?, z_test, cols));
            }
            inputs.push(per_rank);
        }
        let bound = train.output_shape().iter().copied().min().unwrap_or(0);
        let max_q = grid.output.iter().copied().filter(|&r| r <= bound).max().unwrap_or(0);
        let v_full = if max_q > 0 {
            initial_output_bases(&train.y, max_q, base.output_init, base.seed)?
        } else {
            Vec::new()
        };
        Ok(FoldCache {
            train_y: train.y.clone(),
            test_y: test.y.clone(),
            inputs,
            v_full,
        })
    }

    fn projections(&self, input_choice: &[usize]) -> Vec<Option<&Projection>> {
        input_choice
            .iter()
            .enumerate()
            .map(|(j, &ri)| self.inputs[j][ri].0.as_ref())
            .collect()
    }

    /// Held-out squared error of one tuple.
    fn evaluate(
        &self,
        grid: &RankGrid,
        choice: &[usize],
        subspaces: &[Option<Matrix>],
        base: &FitConfig,
    ) -> Result<f64> {
        let (&qi, input_choice) = choice.split_last().expect("non-empty");
        let q = grid.output[qi];
        let v0: Vec<Matrix> = self.v_full.iter().map(|v| v.leading_columns(q)).collect();
        let projections = self.projections(input_choice);
        let core_rows: Vec<usize> = input_choice
            .iter()
            .enumerate()
            .map(|(j, &ri)| self.inputs[j][ri].2)
            .collect();
        let result = run_engine(
            self.train_y.norm_sq(),
            &projections,
            &core_rows,
            subspaces,
            v0,
            base.tol,
            base.max_iter,
        )?;
        let mut acc: Option<Tensor> = None;
        for (j, &ri) in input_choice.iter().enumerate() {
            let t = result.cores[j].mode_product(&self.inputs[j][ri].1, 0)?;
            match acc.as_mut() {
                Some(a) => a.axpy(1.0, &t)?,
                None => acc = Some(t),
            }
        }
        let mut pred = acc.expect("at least one input");
        for (i, v) in result.v.iter().enumerate() {
            pred = pred.mode_product(v, i + 1)?;
        }
        Ok(self.test_y.sub(&pred)?.norm_sq())
    }
}

/// Scores every tuple of `grid` by `k`-fold cross-validation. `base`
/// supplies everything except the ranks.
pub fn cross_validate(data: &Dataset, grid: &RankGrid, k: usize, seed: u64, base: &FitConfig) -> Result<CvReport> {
    let m = data.samples();
    if k < 2 {
        return Err(Error::InvalidConfig("cross-validation needs at least 2 folds".into()));
    }
    if m < k {
        return Err(Error::InvalidConfig(format!("{m} samples cannot fill {k} folds")));
    }
    if grid.inputs.len() != data.xs.len() || grid.inputs.iter().chain([&grid.output]).any(Vec::is_empty) {
        return Err(Error::InvalidConfig("grid does not match the dataset".into()));
    }
    let folds = fold_assignment(m, k, seed);

    // tuples as index vectors into the grid's candidate lists
    let mut sizes: Vec<usize> = grid.inputs.iter().map(Vec::len).collect();
    sizes.push(grid.output.len());
    let mut choices: Vec<Vec<usize>> = vec![Vec::new()];
    for &n in &sizes {
        choices = choices
            .into_iter()
            .flat_map(|prefix| {
                (0..n).map(move |i| {
                    let mut c = prefix.clone();
                    c.push(i);
                    c
                })
            })
            .collect();
    }
    let tuples = grid.tuples();

    let mut rss = vec![0.0; tuples.len()];
    let mut entries = vec![0usize; tuples.len()];
    let mut used = vec![0usize; tuples.len()];
    let mut failure: Vec<Option<String>> = vec![None; tuples.len()];

    for f in 0..k {
        let train_idx: Vec<usize> = (0..m).filter(|&i| folds[i] != f).collect();
        let test_idx: Vec<usize> = (0..m).filter(|&i| folds[i] == f).collect();
        let train = data.select(&train_idx)?;
        let test = data.select(&test_idx)?;
        let cache = FoldCache::build(&train, &test, grid, base)?;
        // tuples sharing input ranks are adjacent; their subspaces coincide
        let mut subspaces: Option<(&[usize], Vec<Option<Matrix>>)> = None;
        for (t, (choice, ranks)) in choices.iter().zip(&tuples).enumerate() {
            if failure[t].is_some() {
                continue;
            }
            let mut cfg = base.clone();
            let (out, inputs) = ranks.split_last().expect("non-empty");
            cfg.input_ranks = inputs.to_vec();
            cfg.output_rank = *out;
            if let Err(e) = cfg.validate(&train) {
                failure[t] = Some(e.to_string());
                continue;
            }
            let input_choice = &choice[..choice.len() - 1];
            if subspaces.as_ref().is_none_or(|(key, _)| *key != input_choice) {
                let modes = train.output_shape().len();
                match response_subspaces(&cache.projections(input_choice), modes) {
                    Ok(s) => subspaces = Some((input_choice, s)),
                    Err(e) => {
                        failure[t] = Some(e.to_string());
                        continue;
                    }
                }
            }
            let (_, sub) = subspaces.as_ref().expect("just filled");
            match cache.evaluate(grid, choice, sub, base) {
                Ok(r) => {
                    rss[t] += r;
                    entries[t] += test.y.len();
                    used[t] += 1;
                }
                Err(e) => failure[t] = Some(e.to_string()),
            }
        }
    }

    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    for (t, ranks) in tuples.into_iter().enumerate() {
        match failure[t].take() {
            Some(reason) => skipped.push((ranks, reason)),
            None => scores.push(TupleScore {
                ranks,
                mean_rss: rss[t] / entries[t] as f64,
                folds_used: used[t],
            }),
        }
    }
    let chosen = scores
        .iter()
        .min_by(|a, b| {
            a.mean_rss
                .total_cmp(&b.mean_rss)
                .then(parameter_count(data, &a.ranks).cmp(&parameter_count(data, &b.ranks)))
                .then(a.ranks.cmp(&b.ranks))
        })
        .map(|s| s.ranks.clone())
        .ok_or_else(|| Error::InvalidConfig("no feasible rank tuple in the grid".into()))?;
    Ok(CvReport {
        scores,
        skipped,
        chosen,
        seed,
        folds: k,
    })
}

/// Builds the grid from `data`, cross-validates, and refits the chosen
/// tuple on all of `data`.
pub fn fit_tuned(data: &Dataset, k: usize, seed: u64, base: &FitConfig) -> Result<(CvReport, MtotModel)> {
    let grid = RankGrid::from_data(data)?;
    let report = cross_validate(data, &grid, k, seed, base)?;
    let model = fit(data, &report.chosen_config(base))?;
    Ok((report, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_examples() {
        assert_eq!(build_grid(0), vec![1]);
        assert_eq!(build_grid(1), vec![1]);
        assert_eq!(build_grid(8), vec![1, 2, 4, 8]);
        assert_eq!(build_grid(5), vec![1, 2, 3, 5]);
        assert_eq!(build_grid(50), vec![1, 2, 4, 7, 13, 25, 50]);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&Matrix::identity(5)).unwrap(), 5);
        let a = [1.0, 2.0, -1.0];
        let b = [0.5, 3.0];
        let outer = Matrix::from_fn(3, 2, |i, j| a[i] * b[j]);
        assert_eq!(numerical_rank(&outer).unwrap(), 1);
        assert_eq!(numerical_rank(&Matrix::zeros(3, 3)).unwrap(), 0);
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let f = fold_assignment(23, 5, 9);
        let mut counts = [0; 5];
        for &x in &f {
            counts[x] += 1;
        }
        assert!(counts.iter().all(|&c| c == 4 || c == 5));
        assert_eq!(f, fold_assignment(23, 5, 9));
        assert_ne!(f, fold_assignment(23, 5, 10));
    }

    #[test]
    fn tuples_enumerate_lexicographically() {
        let g = RankGrid {
            inputs: vec![vec![1, 2], vec![1]],
            output: vec![1, 3],
            input_sources: vec![2, 1],
            output_source: 3,
        };
        assert_eq!(
            g.tuples(),
            vec![vec![1, 1, 1], vec![1, 1, 3], vec![2, 1, 1], vec![2, 1, 3]]
        );
    }

    #[test]
    fn single_tuple_grid_is_chosen_and_exported() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[20, 4], |_| rng.random_range(-1.0..1.0));
        let y = Tensor::from_fn(&[20, 3], |_| rng.random_range(-1.0..1.0));
        let data = Dataset::new(y, vec![x]).unwrap();
        let report = cross_validate(&data, &RankGrid::single(&[2], 2), 5, 3, &FitConfig::new(vec![1], 1)).unwrap();
        assert_eq!(report.chosen, vec![2, 2]);
        assert_eq!(report.scores[0].folds_used, 5);
        let csv = report.to_csv();
        assert!(csv.starts_with("rank_x1,rank_y,mean_rss,folds_used\n2,2,"));
    }

    #[test]
    fn infeasible_tuples_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_fn(&[20, 3], |_| rng.random_range(-1.0..1.0));
        let y = Tensor::from_fn(&[20, 2], |_| rng.random_range(-1.0..1.0));
        let data = Dataset::new(y, vec![x]).unwrap();
        let grid = RankGrid {
            inputs: vec![vec![1, 4]],
            output: vec![1, 2],
            input_sources: vec![4],
            output_source: 2,
        };
        let report = cross_validate(&data, &grid, 4, 0, &FitConfig::new(vec![1], 1)).unwrap();
        assert_eq!(report.scores.len(), 2);
        assert_eq!(report.skipped.len(), 2);
        assert!(report.skipped.iter().all(|(r, _)| r[0] == 4));
    }
}
