//! Ranking competing methods across datasets and metrics, and Tukey HSD
//! Q statistics over their mean ranks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Critical studentized range value for k = 8 groups, ν = 32, α = 0.05.
pub const DEFAULT_Q_CRITICAL: f64 = 4.5209;
/// Error degrees of freedom used with the eight-method comparison table.
pub const DEFAULT_NU: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

impl Orientation {
    /// Error-type metrics (PWC, FNR) are lower-better; everything else higher.
    pub fn infer(metric: &str) -> Self {
        match metric.trim().to_ascii_lowercase().as_str() {
            "pwc" | "fnr" => Orientation::LowerBetter,
            _ => Orientation::HigherBetter,
        }
    }
}

/// Score of every method on every dataset under every metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCube {
    methods: Vec<String>,
    datasets: Vec<String>,
    metrics: Vec<String>,
    orientations: Vec<Orientation>,
    /// Indexed `[method][dataset][metric]`.
    scores: Vec<f64>,
}

fn position_or_push(names: &mut Vec<String>, name: &str) -> usize {
    match names.iter().position(|n| n == name) {
        Some(i) => i,
        None => {
            names.push(name.to_string());
            names.len() - 1
        }
    }
}

impl ScoreCube {
    /// Builds a cube from `(method, dataset, metric, value)` records. Names
    /// keep their first-appearance order; orientation is inferred per metric.
    pub fn from_records<'a, I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str, f64)>,
    {
        let mut methods = Vec::new();
        let mut datasets = Vec::new();
        let mut metrics = Vec::new();
        let mut cells = Vec::new();
        for (m, d, k, v) in records {
            let cell = (
                position_or_push(&mut methods, m),
                position_or_push(&mut datasets, d),
                position_or_push(&mut metrics, k),
                v,
            );
            cells.push(cell);
        }
        let (nm, nd, nk) = (methods.len(), datasets.len(), metrics.len());
        let mut scores = vec![f64::NAN; nm * nd * nk];
        let mut seen = vec![false; nm * nd * nk];
        for (m, d, k, v) in cells {
            let idx = (m * nd + d) * nk + k;
            if seen[idx] {
                return Err(Error::IncompleteCube(format!(
                    "duplicate score for {} / {} / {}",
                    methods[m], datasets[d], metrics[k]
                )));
            }
            if !v.is_finite() {
                return Err(Error::IncompleteCube(format!(
                    "non-finite score for {} / {} / {}",
                    methods[m], datasets[d], metrics[k]
                )));
            }
            seen[idx] = true;
            scores[idx] = v;
        }
        if let Some(idx) = seen.iter().position(|s| !s) {
            let (m, rest) = (idx / (nd * nk), idx % (nd * nk));
            return Err(Error::IncompleteCube(format!(
                "missing score for {} / {} / {}",
                methods[m],
                datasets[rest / nk],
                metrics[rest % nk]
            )));
        }
        let orientations = metrics.iter().map(|k| Orientation::infer(k)).collect();
        Ok(Self {
            methods,
            datasets,
            metrics,
            orientations,
            scores,
        })
    }

    /// Parses `method,dataset,metric,value` CSV with a header line.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Csv {
            line: 1,
            message: "empty score file".into(),
        })?;
        let cols: Vec<String> = header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
        if cols != ["method", "dataset", "metric", "value"] {
            return Err(Error::Csv {
                line: 1,
                message: format!("expected header method,dataset,metric,value, got {header:?}"),
            });
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Csv {
                    line: i + 1,
                    message: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let value: f64 = fields[3].parse().map_err(|_| Error::Csv {
                line: i + 1,
                message: format!("bad value {:?}", fields[3]),
            })?;
            rows.push((fields[0], fields[1], fields[2], value));
        }
        Self::from_records(rows)
    }

    pub fn set_orientation(&mut self, metric: &str, orientation: Orientation) -> Result<()> {
        let k = self
            .metrics
            .iter()
            .position(|m| m == metric)
            .ok_or_else(|| Error::Config(format!("unknown metric {metric:?}")))?;
        self.orientations[k] = orientation;
        Ok(())
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn metrics(&self) -> &[String] {
        &self.metrics
    }

    pub fn orientation(&self, metric: usize) -> Orientation {
        self.orientations[metric]
    }

    pub fn score(&self, method: usize, dataset: usize, metric: usize) -> f64 {
        self.scores[(method * self.datasets.len() + dataset) * self.metrics.len() + metric]
    }

    pub fn scores_mut(&mut self) -> impl Iterator<Item = (usize, usize, usize, &mut f64)> {
        let (nd, nk) = (self.datasets.len(), self.metrics.len());
        self.scores
            .iter_mut()
            .enumerate()
            .map(move |(i, v)| (i / (nd * nk), (i / nk) % nd, i % nk, v))
    }
}

/// Fractional ranks (1 = best); tied values share the mean of their ranks.
pub fn fractional_ranks(values: &[f64], orientation: Orientation) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ord = values[a].total_cmp(&values[b]);
        match orientation {
            Orientation::HigherBetter => ord.reverse(),
            Orientation::LowerBetter => ord,
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j (0-based) share ranks i+1..=j.
        let shared = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = shared;
        }
        i = j;
    }
    ranks
}

/// Average rank of each method under each metric.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    methods: Vec<String>,
    metrics: Vec<String>,
    /// Indexed `[metric][method]`.
    avg: Vec<f64>,
    /// Ranks before averaging, `[metric][dataset][method]`; empty when the
    /// table was built from published averages.
    per_dataset: Vec<Vec<Vec<f64>>>,
}

impl RankTable {
    /// Wraps already-averaged ranks given as one row per metric.
    pub fn from_averages(methods: Vec<String>, metrics: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != metrics.len() || rows.iter().any(|r| r.len() != methods.len()) {
            return Err(Error::Shape(format!(
                "rank rows do not form a {}x{} table",
                metrics.len(),
                methods.len()
            )));
        }
        Ok(Self {
            methods,
            metrics,
            avg: rows.concat(),
            per_dataset: Vec::new(),
        })
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn metrics(&self) -> &[String] {
        &self.metrics
    }

    pub fn avg_rank(&self, metric: usize, method: usize) -> f64 {
        self.avg[metric * self.methods.len() + method]
    }

    pub fn row(&self, metric: usize) -> &[f64] {
        let k = self.methods.len();
        &self.avg[metric * k..(metric + 1) * k]
    }

    pub fn per_dataset(&self) -> &[Vec<Vec<f64>>] {
        &self.per_dataset
    }

    /// Mean over metrics of each method's average rank.
    pub fn method_means(&self) -> Vec<f64> {
        let nk = self.metrics.len() as f64;
        (0..self.methods.len())
            .map(|m| (0..self.metrics.len()).map(|k| self.avg_rank(k, m)).sum::<f64>() / nk)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("metric,{}\n", self.methods.join(","));
        for (k, metric) in self.metrics.iter().enumerate() {
            let row: Vec<String> = self.row(k).iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(out, "{metric},{}", row.join(","));
        }
        let means: Vec<String> = self.method_means().iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(out, "mean,{}", means.join(","));
        out
    }
}

pub fn rank_methods(cube: &ScoreCube) -> Result<RankTable> {
    let (nm, nd, nk) = (cube.methods.len(), cube.datasets.len(), cube.metrics.len());
    if nm < 2 {
        return Err(Error::IncompleteCube(format!("need at least two methods, got {nm}")));
    }
    if nd == 0 || nk == 0 {
        return Err(Error::IncompleteCube("no datasets or metrics".into()));
    }
    let mut avg = vec![0.0; nk * nm];
    let mut per_dataset = vec![Vec::with_capacity(nd); nk];
    for k in 0..nk {
        for d in 0..nd {
            let values: Vec<f64> = (0..nm).map(|m| cube.score(m, d, k)).collect();
            let ranks = fractional_ranks(&values, cube.orientations[k]);
            for (m, r) in ranks.iter().enumerate() {
                avg[k * nm + m] += r / nd as f64;
            }
            per_dataset[k].push(ranks);
        }
    }
    Ok(RankTable {
        methods: cube.methods.clone(),
        metrics: cube.metrics.clone(),
        avg,
        per_dataset,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorTerm {
    /// Sum of squared deviations of each per-metric rank from its method's
    /// mean rank.
    pub sse: f64,
    pub nu: f64,
    pub mse: f64,
}

/// Error sum of squares of the rank table about each method's mean, divided
/// by the caller's degrees of freedom `nu`.
pub fn mse_from_ranks(ranks: &RankTable, nu: f64) -> Result<ErrorTerm> {
    let (nm, nk) = (ranks.methods.len(), ranks.metrics.len());
    if nm < 2 || nk < 2 {
        return Err(Error::DegenerateTable(format!(
            "need at least 2 methods and 2 metrics, got {nm} and {nk}"
        )));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::DegenerateTable(format!("degrees of freedom {nu} must be positive")));
    }
    let means = ranks.method_means();
    let sse: f64 = (0..nm)
        .map(|m| {
            (0..nk)
                .map(|k| (ranks.avg_rank(k, m) - means[m]).powi(2))
                .sum::<f64>()
        })
        .sum();
    if !(sse > 0.0) {
        return Err(Error::DegenerateTable("error sum of squares is zero".into()));
    }
    Ok(ErrorTerm { sse, nu, mse: sse / nu })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TukeyResult {
    pub methods: Vec<String>,
    pub mean_ranks: Vec<f64>,
    /// Symmetric, zero diagonal.
    pub q: Vec<Vec<f64>>,
    pub q_critical: f64,
    pub significant: Vec<Vec<bool>>,
    pub n: usize,
    pub mse: f64,
}

/// `Q[i][j] = |r_i - r_j| * sqrt(n / mse)` over the methods' mean ranks.
pub fn tukey_hsd(ranks: &RankTable, n: usize, mse: f64, q_critical: f64) -> Result<TukeyResult> {
    if !(mse > 0.0 && mse.is_finite()) {
        return Err(Error::Config(format!("mse {mse} must be positive")));
    }
    if n == 0 {
        return Err(Error::Config("sample count n must be at least 1".into()));
    }
    let mean_ranks = ranks.method_means();
    let scale = (n as f64 / mse).sqrt();
    let k = mean_ranks.len();
    let q: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| (mean_ranks[i] - mean_ranks[j]).abs() * scale)
                .collect()
        })
        .collect();
    let significant = q
        .iter()
        .map(|row| row.iter().map(|&v| v > q_critical).collect())
        .collect();
    Ok(TukeyResult {
        methods: ranks.methods.clone(),
        mean_ranks,
        q,
        q_critical,
        significant,
        n,
        mse,
    })
}

impl TukeyResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!(",{}\n", self.methods.join(","));
        for (name, row) in self.methods.iter().zip(&self.q) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(out, "{name},{}", cells.join(","));
        }
        out
    }

    pub fn significance_report(&self) -> String {
        let mut out = format!(
            "Tukey HSD: n = {}, MSE = {:.4}, Q_critical = {:.4}\n",
            self.n, self.mse, self.q_critical
        );
        for i in 0..self.methods.len() {
            for j in i + 1..self.methods.len() {
                let _ = writeln!(
                    out,
                    "{} vs {}: Q = {:.2} {}",
                    self.methods[i],
                    self.methods[j],
                    self.q[i][j],
                    if self.significant[i][j] {
                        "significant"
                    } else {
                        "not significant"
                    }
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fractional_ranks_average_ties() {
        assert_eq!(fractional_ranks(&[0.9, 0.8, 0.9, 0.1], Orientation::HigherBetter), vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(fractional_ranks(&[5.0, 1.0, 3.0], Orientation::LowerBetter), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn dominant_method_ranks_first() {
        let mut rows = Vec::new();
        for d in ["d1", "d2", "d3"] {
            rows.push(("A", d, "OA", 0.9));
            rows.push(("B", d, "OA", 0.8));
            rows.push(("A", d, "PWC", 10.0));
            rows.push(("B", d, "PWC", 20.0));
        }
        let table = rank_methods(&ScoreCube::from_records(rows).unwrap()).unwrap();
        for k in 0..2 {
            assert_eq!(table.row(k), &[1.0, 2.0]);
        }
    }

    #[test]
    fn tie_on_one_dataset() {
        let rows = vec![("A", "d1", "OA", 0.5), ("B", "d1", "OA", 0.5)];
        let table = rank_methods(&ScoreCube::from_records(rows).unwrap()).unwrap();
        assert_eq!(table.row(0), &[1.5, 1.5]);
    }

    #[test]
    fn incomplete_and_duplicate_cubes() {
        let missing = vec![("A", "d1", "OA", 0.5), ("B", "d1", "OA", 0.4), ("A", "d2", "OA", 0.3)];
        assert!(matches!(ScoreCube::from_records(missing), Err(Error::IncompleteCube(_))));
        let dup = vec![("A", "d1", "OA", 0.5), ("A", "d1", "OA", 0.4)];
        assert!(matches!(ScoreCube::from_records(dup), Err(Error::IncompleteCube(_))));
        let one = vec![("A", "d1", "OA", 0.5)];
        assert!(rank_methods(&ScoreCube::from_records(one).unwrap()).is_err());
    }

    #[test]
    fn csv_parsing() {
        let cube = ScoreCube::from_csv("method,dataset,metric,value\nA,x,OA,0.9\nB,x,OA,0.8\n").unwrap();
        assert_eq!(cube.methods(), &["A", "B"]);
        assert!(ScoreCube::from_csv("a,b\n").is_err());
        assert!(ScoreCube::from_csv("method,dataset,metric,value\nA,x,OA,zz\n").is_err());
    }

    #[test]
    fn orientation_inference() {
        assert_eq!(Orientation::infer("PWC"), Orientation::LowerBetter);
        for m in ["OA", "Kappa", "f-score", "DR"] {
            assert_eq!(Orientation::infer(m), Orientation::HigherBetter);
        }
    }

    fn two_by_two(a: [f64; 2], b: [f64; 2]) -> RankTable {
        RankTable::from_averages(
            vec!["A".into(), "B".into()],
            vec!["m1".into(), "m2".into()],
            &[vec![a[0], b[0]], vec![a[1], b[1]]],
        )
        .unwrap()
    }

    #[test]
    fn tukey_toy() {
        let t = two_by_two([1.0, 2.0], [2.0, 1.0]);
        let r = tukey_hsd(&t, 2, 0.5, 1.0).unwrap();
        assert_eq!(r.q, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let t = two_by_two([1.0, 1.0], [2.0, 2.0]);
        let r = tukey_hsd(&t, 4, 1.0, 1.5).unwrap();
        assert_eq!(r.q[0][1], 2.0);
        assert!(r.significant[0][1] && !r.significant[0][0]);
        assert!(tukey_hsd(&t, 4, 0.0, 1.5).is_err());
        assert!(tukey_hsd(&t, 0, 1.0, 1.5).is_err());
    }

    #[test]
    fn sse_degenerate_and_scaling() {
        let flat = two_by_two([1.0, 1.0], [2.0, 2.0]);
        assert!(matches!(mse_from_ranks(&flat, 1.0), Err(Error::DegenerateTable(_))));
        let t = two_by_two([1.0, 2.0], [2.0, 1.0]);
        let doubled = two_by_two([0.5, 2.5], [2.5, 0.5]);
        let a = mse_from_ranks(&t, 1.0).unwrap().sse;
        let b = mse_from_ranks(&doubled, 1.0).unwrap().sse;
        assert!((b - 4.0 * a).abs() < 1e-12);
    }

    fn random_cube() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (2usize..6, 1usize..4).prop_flat_map(|(m, d)| {
            (Just(m), Just(d), proptest::collection::vec(0.0f64..1.0, m * d))
        })
    }

    fn cube_of(m: usize, d: usize, values: &[f64], metric: &str) -> ScoreCube {
        let names: Vec<String> = (0..m).map(|i| format!("M{i}")).collect();
        let sets: Vec<String> = (0..d).map(|i| format!("D{i}")).collect();
        let mut rows = Vec::new();
        for i in 0..m {
            for j in 0..d {
                rows.push((names[i].as_str(), sets[j].as_str(), metric, values[i * d + j]));
            }
        }
        ScoreCube::from_records(rows).unwrap()
    }

    proptest! {
        #[test]
        fn per_dataset_ranks_sum_to_triangular((m, d, values) in random_cube()) {
            let table = rank_methods(&cube_of(m, d, &values, "OA")).unwrap();
            for ranks in &table.per_dataset()[0] {
                prop_assert!((ranks.iter().sum::<f64>() - (m * (m + 1)) as f64 / 2.0).abs() < 1e-9);
            }
        }

        #[test]
        fn monotone_transform_keeps_ranks((m, d, values) in random_cube()) {
            let base = rank_methods(&cube_of(m, d, &values, "OA")).unwrap();
            let warped: Vec<f64> = values.iter().map(|v| (3.0 * v).exp() - 1.0).collect();
            let other = rank_methods(&cube_of(m, d, &warped, "OA")).unwrap();
            prop_assert_eq!(base.row(0), other.row(0));
        }

        #[test]
        fn reversing_orientation_reverses_ranks((m, d, values) in random_cube()) {
            let cube = cube_of(m, d, &values, "OA");
            let mut flipped = cube.clone();
            flipped.set_orientation("OA", Orientation::LowerBetter).unwrap();
            let a = rank_methods(&cube).unwrap();
            let b = rank_methods(&flipped).unwrap();
            for (ra, rb) in a.per_dataset()[0].iter().zip(&b.per_dataset()[0]) {
                for (x, y) in ra.iter().zip(rb) {
                    prop_assert!((x + y - (m + 1) as f64).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn q_symmetric_and_scaling(rows in proptest::collection::vec(proptest::collection::vec(1.0f64..8.0, 4), 3),
                                   n in 1usize..10, mse in 0.01f64..5.0) {
            let table = RankTable::from_averages(
                (0..4).map(|i| format!("M{i}")).collect(),
                (0..3).map(|i| format!("k{i}")).collect(),
                &rows,
            ).unwrap();
            let r = tukey_hsd(&table, n, mse, 3.0).unwrap();
            let r4 = tukey_hsd(&table, 4 * n, mse, 3.0).unwrap();
            let rm = tukey_hsd(&table, n, 4.0 * mse, 3.0).unwrap();
            for i in 0..4 {
                prop_assert_eq!(r.q[i][i], 0.0);
                for j in 0..4 {
                    prop_assert_eq!(r.q[i][j], r.q[j][i]);
                    prop_assert!(r.q[i][j] >= 0.0);
                    prop_assert!((r4.q[i][j] - 2.0 * r.q[i][j]).abs() < 1e-9);
                    prop_assert!((rm.q[i][j] - 0.5 * r.q[i][j]).abs() < 1e-9);
                    prop_assert_eq!(r.significant[i][j], r.q[i][j] > 3.0);
                }
            }
        }
    }
}
