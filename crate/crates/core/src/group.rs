//! Sequential group families and their online orbit summaries.
//!
//! Each family keeps the smallest summary of the data prefix that identifies
//! its orbit: order statistics for the permutation groups, the squared norm
//! for the full orthogonal group, and Gram/cross-moment accumulators for the
//! isotropy group of a design matrix. Folding one observation at a time gives
//! the same summary as recomputing it from the whole prefix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot tolerance for the design Gram matrix.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// All permutations of the prefix (exchangeability).
    FullPermutation,
    /// Permutations within residue classes of the 1-based index modulo `period`.
    ModularPermutation { period: usize },
    /// Permutations among observations sharing a label in `0..labels`.
    LabelPermutation { labels: usize },
    /// The orthogonal group O(n) (spherical symmetry about the origin).
    FullOrthogonal,
    /// Rotations fixing every column of an `n x dim` design matrix.
    DesignIsotropy { dim: usize },
}

/// Which per-observation score is ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Score {
    Identity,
    /// Ranks the covariate carried by a labelled observation.
    CovariateProjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    family: Family,
    score: Score,
}

impl GroupSpec {
    pub fn new(family: Family) -> Result<Self> {
        let bad = |what: &str| Err(Error::InvalidSpec(format!("{what} must be >= 1")));
        match family {
            Family::ModularPermutation { period: 0 } => return bad("period k"),
            Family::LabelPermutation { labels: 0 } => return bad("label alphabet size"),
            Family::DesignIsotropy { dim: 0 } => return bad("covariate dimension d"),
            _ => {}
        }
        let score = match family {
            Family::LabelPermutation { .. } => Score::CovariateProjection,
            _ => Score::Identity,
        };
        Ok(Self { family, score })
    }

    pub fn full_permutation() -> Self {
        Self::new(Family::FullPermutation).expect("valid")
    }

    pub fn full_orthogonal() -> Self {
        Self::new(Family::FullOrthogonal).expect("valid")
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn score(&self) -> Score {
        self.score
    }

    pub fn is_permutation(&self) -> bool {
        matches!(
            self.family,
            Family::FullPermutation
                | Family::ModularPermutation { .. }
                | Family::LabelPermutation { .. }
        )
    }

    /// Checks that an observation carries exactly the payload this family needs.
    pub fn validate(&self, obs: &Observation) -> Result<()> {
        if !obs.value.is_finite() {
            return Err(Error::PayloadMismatch(format!(
                "value {} is not finite",
                obs.value
            )));
        }
        match (self.family, obs.label) {
            (Family::LabelPermutation { labels }, Some(l)) if l >= labels => {
                return Err(Error::PayloadMismatch(format!(
                    "label {l} outside 0..{labels}"
                )))
            }
            (Family::LabelPermutation { .. }, None) => {
                return Err(Error::PayloadMismatch("missing label".into()))
            }
            (Family::LabelPermutation { .. }, Some(_)) | (_, None) => {}
            (_, Some(_)) => {
                return Err(Error::PayloadMismatch(
                    "label given for a family without labels".into(),
                ))
            }
        }
        match (self.family, &obs.covariates) {
            (Family::DesignIsotropy { dim }, Some(z)) => {
                if z.len() != dim {
                    return Err(Error::PayloadMismatch(format!(
                        "expected {dim} covariates, got {}",
                        z.len()
                    )));
                }
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::PayloadMismatch("non-finite covariate".into()));
                }
            }
            (Family::DesignIsotropy { .. }, None) => {
                return Err(Error::PayloadMismatch("missing covariates".into()))
            }
            (_, Some(_)) => {
                return Err(Error::PayloadMismatch(
                    "covariates given for a family without a design".into(),
                ))
            }
            (_, None) => {}
        }
        Ok(())
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::FullPermutation => write!(f, "perm"),
            Family::ModularPermutation { period } => write!(f, "perm-mod:{period}"),
            Family::LabelPermutation { labels } => write!(f, "perm-label:{labels}"),
            Family::FullOrthogonal => write!(f, "sphere"),
            Family::DesignIsotropy { dim } => write!(f, "isotropy:{dim}"),
        }
    }
}

impl FromStr for GroupSpec {
    type Err = Error;

    /// Parses `perm`, `perm-mod:<k>`, `perm-label:<K>`, `sphere` or `isotropy:<d>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let int_arg = |name: &str| -> Result<usize> {
            let a = arg.ok_or_else(|| Error::InvalidSpec(format!("{name} needs an argument")))?;
            a.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidSpec(format!("bad integer `{a}` for {name}")))
        };
        let family = match head {
            "perm" if arg.is_none() => Family::FullPermutation,
            "sphere" if arg.is_none() => Family::FullOrthogonal,
            "perm-mod" => Family::ModularPermutation {
                period: int_arg("perm-mod")?,
            },
            "perm-label" => Family::LabelPermutation {
                labels: int_arg("perm-label")?,
            },
            "isotropy" => Family::DesignIsotropy {
                dim: int_arg("isotropy")?,
            },
            _ => return Err(Error::InvalidSpec(format!("unknown group `{s}`"))),
        };
        GroupSpec::new(family)
    }
}

/// One element of the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// The response; for labelled data this is the covariate being ranked.
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<f64>>,
}

impl Observation {
    pub fn scalar(value: f64) -> Self {
        Self {
            value,
            label: None,
            covariates: None,
        }
    }

    pub fn labelled(value: f64, label: usize) -> Self {
        Self {
            value,
            label: Some(label),
            covariates: None,
        }
    }

    pub fn regression(response: f64, covariates: Vec<f64>) -> Self {
        Self {
            value: response,
            label: None,
            covariates: Some(covariates),
        }
    }
}

/// Sorted multiset of reals; ties are kept with multiplicity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SortedMultiset(Vec<f64>);

impl SortedMultiset {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn insert(&mut self, x: f64) {
        let at = self.0.partition_point(|&v| v <= x);
        self.0.insert(at, x);
    }

    /// Removes one copy of `x`, returning whether it was present.
    pub fn remove(&mut self, x: f64) -> bool {
        let lo = self.0.partition_point(|&v| v < x);
        if lo < self.0.len() && self.0[lo] == x {
            self.0.remove(lo);
            true
        } else {
            false
        }
    }

    pub fn count_greater(&self, x: f64) -> usize {
        self.0.len() - self.0.partition_point(|&v| v <= x)
    }

    pub fn count_equal(&self, x: f64) -> usize {
        let lo = self.0.partition_point(|&v| v < x);
        let hi = self.0.partition_point(|&v| v <= x);
        hi - lo
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn has_ties(&self) -> bool {
        self.0.windows(2).any(|w| w[0] == w[1])
    }
}

impl FromIterator<f64> for SortedMultiset {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut v: Vec<f64> = iter.into_iter().collect();
        v.sort_by(f64::total_cmp);
        Self(v)
    }
}

/// Accumulators for the isotropy group of a design: `ZᵀZ`, `ZᵀY`, `‖Y‖²`
/// and the residual sum of squares, which is updated recursively so that it
/// does not suffer the cancellation of `‖Y‖² - YᵀZ(ZᵀZ)⁻¹ZᵀY` at large n.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSummary {
    dim: usize,
    gram: Vec<f64>,
    cross: Vec<f64>,
    sum_sq: f64,
    rss: f64,
    full_rank: bool,
}

impl DesignSummary {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            gram: vec![0.0; dim * dim],
            cross: vec![0.0; dim],
            sum_sq: 0.0,
            rss: 0.0,
            full_rank: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `ZᵀZ`.
    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    pub fn cross(&self) -> &[f64] {
        &self.cross
    }

    pub fn response_sum_sq(&self) -> f64 {
        self.sum_sq
    }

    pub fn rss(&self) -> f64 {
        self.rss
    }

    pub fn is_full_rank(&self) -> bool {
        self.full_rank
    }

    /// Solves `ZᵀZ w = rhs`; `None` when the Gram matrix fails the pivot test.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let ldl = Ldl::factor(&self.gram, self.dim)?;
        Some(ldl.solve(rhs))
    }

    /// Least-squares coefficients of the current prefix.
    pub fn coefficients(&self) -> Option<Vec<f64>> {
        self.solve(&self.cross)
    }

    fn fold(&self, y: f64, z: &[f64]) -> Self {
        let d = self.dim;
        let mut next = self.clone();
        if self.full_rank {
            // prediction-error form of the recursive least-squares update
            let ldl = Ldl::factor(&self.gram, d).expect("full-rank Gram factors");
            let w = ldl.solve(z);
            let beta = ldl.solve(&self.cross);
            let v = dot(z, &w);
            let eps = y - dot(z, &beta);
            next.rss += eps * eps / (1.0 + v);
        }
        for i in 0..d {
            for j in 0..d {
                next.gram[i * d + j] += z[i] * z[j];
            }
            next.cross[i] += z[i] * y;
        }
        next.sum_sq += y * y;
        if !self.full_rank {
            if let Some(ldl) = Ldl::factor(&next.gram, d) {
                next.full_rank = true;
                let beta = ldl.solve(&next.cross);
                next.rss = (next.sum_sq - dot(&next.cross, &beta)).max(0.0);
            }
        }
        next
    }
}

/// LDLᵀ factorization of a small symmetric matrix with a relative pivot test.
struct Ldl {
    dim: usize,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl Ldl {
    fn factor(a: &[f64], dim: usize) -> Option<Self> {
        let mut lower = vec![0.0; dim * dim];
        let mut diag = vec![0.0; dim];
        for j in 0..dim {
            let mut dj = a[j * dim + j];
            for k in 0..j {
                dj -= lower[j * dim + k] * lower[j * dim + k] * diag[k];
            }
            diag[j] = dj;
            lower[j * dim + j] = 1.0;
            for i in (j + 1)..dim {
                let mut v = a[i * dim + j];
                for k in 0..j {
                    v -= lower[i * dim + k] * lower[j * dim + k] * diag[k];
                }
                lower[i * dim + j] = if dj != 0.0 { v / dj } else { 0.0 };
            }
        }
        let largest = diag.iter().cloned().fold(0.0_f64, f64::max);
        let smallest = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if largest <= 0.0 || smallest <= RANK_TOLERANCE * largest {
            return None;
        }
        Some(Self { dim, lower, diag })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut x = rhs.to_vec();
        for i in 0..d {
            for k in 0..i {
                x[i] -= self.lower[i * d + k] * x[k];
            }
        }
        for i in 0..d {
            x[i] /= self.diag[i];
        }
        for i in (0..d).rev() {
            for k in (i + 1)..d {
                x[i] -= self.lower[k * d + i] * x[k];
            }
        }
        x
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Summary {
    Sorted(SortedMultiset),
    /// Per residue class (`n mod k`) or per label.
    Classes(Vec<SortedMultiset>),
    /// Squared norm of the prefix and of the prefix without its last element.
    Norm {
        sum_sq: f64,
        prev_sum_sq: f64,
    },
    Design(DesignSummary),
}

/// The orbit summary of a data prefix under a sequential group family.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitState {
    spec: GroupSpec,
    n: usize,
    summary: Summary,
}

impl OrbitState {
    pub fn new(spec: GroupSpec) -> Self {
        let summary = match spec.family {
            Family::FullPermutation => Summary::Sorted(SortedMultiset::new()),
            Family::ModularPermutation { period: k } => {
                Summary::Classes(vec![SortedMultiset::new(); k])
            }
            Family::LabelPermutation { labels } => {
                Summary::Classes(vec![SortedMultiset::new(); labels])
            }
            Family::FullOrthogonal => Summary::Norm {
                sum_sq: 0.0,
                prev_sum_sq: 0.0,
            },
            Family::DesignIsotropy { dim } => Summary::Design(DesignSummary::new(dim)),
        };
        Self {
            spec,
            n: 0,
            summary,
        }
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn summary(&self) -> &Summary {
        &self.summary
    }

    /// Index of the class observation number `n` (1-based) falls into.
    pub fn class_of(&self, n: usize, obs: &Observation) -> usize {
        match self.spec.family {
            Family::ModularPermutation { period } => n % period,
            Family::LabelPermutation { .. } => obs.label.unwrap_or(0),
            _ => 0,
        }
    }

    /// The multiset the newest permutation rank is computed against.
    pub fn reference_class(&self, obs: &Observation) -> Option<&SortedMultiset> {
        match &self.summary {
            Summary::Sorted(s) => Some(s),
            Summary::Classes(c) => c.get(self.class_of(self.n, obs)),
            _ => None,
        }
    }

    /// Folds one observation into the summary. On error the state is unchanged.
    pub fn update(&mut self, obs: &Observation) -> Result<()> {
        self.spec.validate(obs)?;
        let n = self.n + 1;
        match &mut self.summary {
            Summary::Sorted(s) => s.insert(obs.value),
            Summary::Classes(classes) => {
                let idx = match self.spec.family {
                    Family::ModularPermutation { period } => n % period,
                    _ => obs.label.expect("validated"),
                };
                classes[idx].insert(obs.value);
            }
            Summary::Norm {
                sum_sq,
                prev_sum_sq,
            } => {
                *prev_sum_sq = *sum_sq;
                *sum_sq += obs.value * obs.value;
            }
            Summary::Design(design) => {
                let z = obs.covariates.as_deref().expect("validated");
                let next = design.fold(obs.value, z);
                if n > design.dim && !next.full_rank {
                    return Err(Error::DegenerateDesign { n });
                }
                *design = next;
            }
        }
        self.n = n;
        Ok(())
    }

    /// Number of reals held by the summary; grows with n only for the
    /// permutation families.
    pub fn stored_reals(&self) -> usize {
        match &self.summary {
            Summary::Sorted(s) => s.len(),
            Summary::Classes(c) => c.iter().map(SortedMultiset::len).sum(),
            Summary::Norm { .. } => 2,
            Summary::Design(d) => d.gram.len() + d.cross.len() + 2,
        }
    }
}

/// Functional form of [`OrbitState::new`].
pub fn init_state(spec: GroupSpec) -> OrbitState {
    OrbitState::new(spec)
}

/// Functional form of [`OrbitState::update`].
pub fn update_state(mut state: OrbitState, obs: &Observation) -> Result<OrbitState> {
    state.update(obs)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fold(spec: GroupSpec, obs: &[Observation]) -> OrbitState {
        obs.iter()
            .fold(init_state(spec), |s, o| update_state(s, o).unwrap())
    }

    fn scalars(v: &[f64]) -> Vec<Observation> {
        v.iter().map(|&x| Observation::scalar(x)).collect()
    }

    #[test]
    fn init_states_are_empty() {
        let s = init_state(GroupSpec::full_permutation());
        assert_eq!(s.n(), 0);
        assert_eq!(s.summary(), &Summary::Sorted(SortedMultiset::new()));

        let s = init_state(GroupSpec::full_orthogonal());
        assert_eq!(
            s.summary(),
            &Summary::Norm {
                sum_sq: 0.0,
                prev_sum_sq: 0.0
            }
        );

        let s = init_state(GroupSpec::new(Family::DesignIsotropy { dim: 2 }).unwrap());
        match s.summary() {
            Summary::Design(d) => {
                assert_eq!(d.gram(), &[0.0; 4]);
                assert!(!d.is_full_rank());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(GroupSpec::new(Family::ModularPermutation { period: 0 }).is_err());
        assert!(GroupSpec::new(Family::LabelPermutation { labels: 0 }).is_err());
        assert!(GroupSpec::new(Family::DesignIsotropy { dim: 0 }).is_err());
        assert!("perm-mod:0".parse::<GroupSpec>().is_err());
        assert!("perm:3".parse::<GroupSpec>().is_err());
        assert!("rotation".parse::<GroupSpec>().is_err());
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["perm", "perm-mod:3", "perm-label:2", "sphere", "isotropy:4"] {
            let spec: GroupSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        let spec: GroupSpec = "perm-label:2".parse().unwrap();
        assert_eq!(spec.score(), Score::CovariateProjection);
    }

    #[test]
    fn permutation_insert_keeps_order() {
        let s = fold(GroupSpec::full_permutation(), &scalars(&[1.0, 3.0, 2.0]));
        assert_eq!(s.n(), 3);
        match s.summary() {
            Summary::Sorted(m) => assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn orthogonal_accumulates_squared_norm() {
        let s = fold(GroupSpec::full_orthogonal(), &scalars(&[1.0, 2.0]));
        assert_eq!(
            s.summary(),
            &Summary::Norm {
                sum_sq: 5.0,
                prev_sum_sq: 1.0
            }
        );
        let s = update_state(s, &Observation::scalar(2.0)).unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(
            s.summary(),
            &Summary::Norm {
                sum_sq: 9.0,
                prev_sum_sq: 5.0
            }
        );
    }

    #[test]
    fn modular_routes_by_one_based_residue() {
        let spec = GroupSpec::new(Family::ModularPermutation { period: 2 }).unwrap();
        let s = fold(spec, &scalars(&[1.0, 4.0]));
        let s = update_state(s, &Observation::scalar(7.0)).unwrap();
        match s.summary() {
            Summary::Classes(c) => {
                assert_eq!(c[1].as_slice(), &[1.0, 7.0]);
                assert_eq!(c[0].as_slice(), &[4.0]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn payload_mismatches() {
        let label = GroupSpec::new(Family::LabelPermutation { labels: 2 }).unwrap();
        let mut s = init_state(label);
        assert!(matches!(
            s.update(&Observation::scalar(1.0)),
            Err(Error::PayloadMismatch(_))
        ));
        assert!(s.update(&Observation::labelled(1.0, 2)).is_err());
        assert!(s.update(&Observation::labelled(1.0, 1)).is_ok());

        let iso = GroupSpec::new(Family::DesignIsotropy { dim: 2 }).unwrap();
        let mut s = init_state(iso);
        assert!(s.update(&Observation::scalar(1.0)).is_err());
        assert!(s.update(&Observation::regression(1.0, vec![1.0])).is_err());
        assert!(s
            .update(&Observation::regression(1.0, vec![1.0, f64::NAN]))
            .is_err());
        assert_eq!(s.n(), 0);

        let mut s = init_state(GroupSpec::full_permutation());
        assert!(s.update(&Observation::scalar(f64::INFINITY)).is_err());
        assert!(s.update(&Observation::labelled(1.0, 0)).is_err());
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let iso = GroupSpec::new(Family::DesignIsotropy { dim: 2 }).unwrap();
        let mut s = init_state(iso);
        // second column is a multiple of the first
        for (y, z) in [(1.0, [1.0, 2.0]), (2.0, [2.0, 4.0])] {
            s.update(&Observation::regression(y, z.to_vec())).unwrap();
        }
        let err = s
            .update(&Observation::regression(0.5, vec![3.0, 6.0]))
            .unwrap_err();
        assert_eq!(err, Error::DegenerateDesign { n: 3 });
        assert_eq!(s.n(), 2);
    }

    #[test]
    fn recursive_rss_matches_direct_formula() {
        let iso = GroupSpec::new(Family::DesignIsotropy { dim: 2 }).unwrap();
        let data = [
            (0.3, [1.0, -0.2]),
            (1.1, [1.0, 0.7]),
            (-0.4, [1.0, 1.5]),
            (2.0, [1.0, -1.1]),
            (0.9, [1.0, 0.05]),
            (-1.3, [1.0, 2.2]),
        ];
        let obs: Vec<_> = data
            .iter()
            .map(|(y, z)| Observation::regression(*y, z.to_vec()))
            .collect();
        let s = fold(iso, &obs);
        let Summary::Design(d) = s.summary() else {
            unreachable!()
        };
        let beta = d.coefficients().unwrap();
        let direct: f64 = data
            .iter()
            .map(|(y, z)| {
                let e = y - dot(z, &beta);
                e * e
            })
            .sum();
        assert!((d.rss() - direct).abs() < 1e-12);
    }

    #[test]
    fn memory_is_bounded_for_fixed_size_families() {
        let mut s = init_state(GroupSpec::full_orthogonal());
        let mut d = init_state(GroupSpec::new(Family::DesignIsotropy { dim: 3 }).unwrap());
        let mut p = init_state(GroupSpec::full_permutation());
        for i in 0..100_000u32 {
            let x = ((i as f64) * 0.618_033_988_75).fract() - 0.5;
            s.update(&Observation::scalar(x)).unwrap();
            p.update(&Observation::scalar(x)).unwrap();
            let z = vec![1.0, x, ((i as f64) * 0.414_213_562).fract()];
            d.update(&Observation::regression(x, z)).unwrap();
        }
        assert_eq!(s.stored_reals(), 2);
        assert_eq!(d.stored_reals(), 9 + 3 + 2);
        assert_eq!(p.stored_reals(), 100_000);
    }
}
