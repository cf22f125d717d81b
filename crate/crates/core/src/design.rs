//! Functional datasets and the stacked random-effects design
//! `Y = B γ₀ + Σ_k Z_k γ_k + ε`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};

use crate::basis::{ridge_penalty, BasisSpec, Interval, PenaltyFactor};
use crate::error::{Error, Result};

/// One variable of one subject, observed at irregular times.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite time or value".into()));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Copy sorted by time; rejects repeated times.
    pub fn sorted(&self) -> Result<Curve> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.times[a].total_cmp(&self.times[b]));
        let times: Vec<f64> = idx.iter().map(|&i| self.times[i]).collect();
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("repeated observation time".into()));
        }
        let values = idx.iter().map(|&i| self.values[i]).collect();
        Ok(Curve { times, values })
    }
}

/// A subject as observed: every variable on its own grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSubject {
    pub id: String,
    pub response: Curve,
    /// One curve per entry of [`ObservedDataset::covariate_names`].
    pub covariates: Vec<Curve>,
}

/// Raw long-format data, before covariates are aligned with the response.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedDataset {
    pub response_name: String,
    pub covariate_names: Vec<String>,
    pub subjects: Vec<ObservedSubject>,
}

impl ObservedDataset {
    pub fn validate(&self) -> Result<()> {
        if self.subjects.is_empty() {
            return Err(Error::InvalidInput("dataset has no subjects".into()));
        }
        let p = self.covariate_names.len();
        let mut ids: Vec<&str> = self.subjects.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!("duplicate subject id {}", w[0])));
        }
        for s in &self.subjects {
            if s.covariates.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "subject {} has {} covariates, expected {p}",
                    s.id,
                    s.covariates.len()
                )));
            }
            if s.response.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "subject {} has no response observations",
                    s.id
                )));
            }
        }
        Ok(())
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Smallest interval holding every observation time.
    pub fn time_range(&self) -> Result<Interval> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.subjects {
            for c in core::iter::once(&s.response).chain(&s.covariates) {
                for &t in &c.times {
                    lo = lo.min(t);
                    hi = hi.max(t);
                }
            }
        }
        Interval::new(lo, hi)
    }

    /// All covariates must be observed exactly at the response times.
    pub fn align(&self) -> Result<FunctionalDataset> {
        self.validate()?;
        let p = self.covariate_names.len();
        let mut subjects = Vec::with_capacity(self.subjects.len());
        for s in &self.subjects {
            let response = s.response.sorted()?;
            let m = response.len();
            let mut covariates = DMatrix::zeros(m, p);
            for (k, c) in s.covariates.iter().enumerate() {
                let c = c.sorted()?;
                if c.times != response.times {
                    return Err(Error::DimensionMismatch(format!(
                        "subject {}: covariate {} is not observed at the response times",
                        s.id, self.covariate_names[k]
                    )));
                }
                for j in 0..m {
                    covariates[(j, k)] = c.values[j];
                }
            }
            subjects.push(SubjectRecord {
                id: s.id.clone(),
                times: response.times,
                response: response.values,
                covariates,
            });
        }
        FunctionalDataset::new(subjects, self.covariate_names.clone())
    }
}

/// Response and covariates of one subject on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub times: Vec<f64>,
    pub response: Vec<f64>,
    /// `m × p`, row `j` holds the covariates at `times[j]`.
    pub covariates: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    pub subjects: Vec<SubjectRecord>,
    pub covariate_names: Vec<String>,
}

impl FunctionalDataset {
    pub fn new(subjects: Vec<SubjectRecord>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        if subjects.is_empty() {
            return Err(Error::InvalidInput("dataset has no subjects".into()));
        }
        let mut ids: Vec<&str> = subjects.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!("duplicate subject id {}", w[0])));
        }
        for s in &subjects {
            let m = s.times.len();
            if m == 0 {
                return Err(Error::InvalidInput(format!("subject {} is empty", s.id)));
            }
            if s.response.len() != m || s.covariates.nrows() != m || s.covariates.ncols() != p {
                return Err(Error::DimensionMismatch(format!(
                    "subject {}: {} times, {} responses, {}x{} covariates (expected p = {p})",
                    s.id,
                    m,
                    s.response.len(),
                    s.covariates.nrows(),
                    s.covariates.ncols()
                )));
            }
            if s.times.iter().chain(&s.response).chain(s.covariates.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("subject {} has non-finite data", s.id)));
            }
        }
        Ok(Self {
            subjects,
            covariate_names,
        })
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn num_covariates(&self) -> usize {
        self.covariate_names.len()
    }
}

/// A basis together with its ridge-penalty factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentBasis {
    pub spec: BasisSpec,
    pub factor: PenaltyFactor,
}

impl ComponentBasis {
    pub fn ridge(spec: BasisSpec) -> Result<Self> {
        let factor = ridge_penalty(&spec)?;
        Ok(Self { spec, factor })
    }

    /// Rows `B(t_j)ᵀ R` for the given times.
    pub fn design_rows(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.spec.evaluate(times)? * &self.factor.scale_sqrt)
    }
}

/// Stacked response and designs, rows grouped by subject.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDesign {
    pub y: DVector<f64>,
    /// Intercept design `B = 𝓑 R₀`.
    pub b_mat: DMatrix<f64>,
    /// Covariate designs `Z_k = diag(X_k) 𝓑_k R_k`.
    pub z_mats: Vec<DMatrix<f64>>,
    pub block_offsets: Vec<Range<usize>>,
    pub times_per_subject: Vec<Vec<f64>>,
    pub subject_ids: Vec<String>,
}

/// Row block of one subject.
#[derive(Debug, Clone)]
pub struct SubjectBlock<'a> {
    pub y: DVectorView<'a, f64>,
    pub b: DMatrixView<'a, f64>,
    pub z: Vec<DMatrixView<'a, f64>>,
}

impl StackedDesign {
    pub fn num_subjects(&self) -> usize {
        self.block_offsets.len()
    }

    pub fn num_obs(&self) -> usize {
        self.y.len()
    }

    /// Intercept plus one component per covariate.
    pub fn num_components(&self) -> usize {
        1 + self.z_mats.len()
    }

    /// Component 0 is the intercept, `k ≥ 1` the k-th covariate.
    pub fn component(&self, k: usize) -> &DMatrix<f64> {
        if k == 0 {
            &self.b_mat
        } else {
            &self.z_mats[k - 1]
        }
    }

    pub fn subject_block(&self, i: usize) -> Result<SubjectBlock<'_>> {
        let rows = self
            .block_offsets
            .get(i)
            .ok_or(Error::IndexOutOfRange {
                index: i,
                len: self.num_subjects(),
            })?
            .clone();
        let m = rows.len();
        Ok(SubjectBlock {
            y: self.y.rows(rows.start, m),
            b: self.b_mat.rows(rows.start, m),
            z: self.z_mats.iter().map(|z| z.rows(rows.start, m)).collect(),
        })
    }
}

/// Build the stacked design. Subjects are ordered by id, times ascending.
pub fn build_design(
    data: &FunctionalDataset,
    intercept: &ComponentBasis,
    covariates: &[ComponentBasis],
) -> Result<StackedDesign> {
    let p = data.num_covariates();
    if covariates.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate bases for {p} covariates",
            covariates.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.subjects.len()).collect();
    order.sort_by(|&a, &b| data.subjects[a].id.cmp(&data.subjects[b].id));

    let n_obs: usize = data.subjects.iter().map(|s| s.times.len()).sum();
    let k0 = intercept.spec.num_basis();
    let mut y = DVector::zeros(n_obs);
    let mut b_mat = DMatrix::zeros(n_obs, k0);
    let mut z_mats: Vec<DMatrix<f64>> = covariates
        .iter()
        .map(|c| DMatrix::zeros(n_obs, c.spec.num_basis()))
        .collect();
    let mut block_offsets = Vec::with_capacity(order.len());
    let mut times_per_subject = Vec::with_capacity(order.len());
    let mut subject_ids = Vec::with_capacity(order.len());

    let mut row = 0;
    for &i in &order {
        let s = &data.subjects[i];
        let m = s.times.len();
        let mut perm: Vec<usize> = (0..m).collect();
        perm.sort_by(|&a, &b| s.times[a].total_cmp(&s.times[b]));
        let times: Vec<f64> = perm.iter().map(|&j| s.times[j]).collect();
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "subject {} has repeated observation times",
                s.id
            )));
        }

        let c0 = intercept.design_rows(&times)?;
        b_mat.rows_mut(row, m).copy_from(&c0);
        for (j, &src) in perm.iter().enumerate() {
            y[row + j] = s.response[src];
        }
        for (k, comp) in covariates.iter().enumerate() {
            let rows = comp.design_rows(&times)?;
            let mut block = z_mats[k].rows_mut(row, m);
            for (j, &src) in perm.iter().enumerate() {
                let x = s.covariates[(src, k)];
                for c in 0..rows.ncols() {
                    block[(j, c)] = x * rows[(j, c)];
                }
            }
        }
        block_offsets.push(row..row + m);
        times_per_subject.push(times);
        subject_ids.push(s.id.clone());
        row += m;
    }

    Ok(StackedDesign {
        y,
        b_mat,
        z_mats,
        block_offsets,
        times_per_subject,
        subject_ids,
    })
}

/// Standard bases for an intercept and `p` covariates sharing one spec.
pub fn uniform_bases(spec: &BasisSpec, p: usize) -> Result<(ComponentBasis, Vec<ComponentBasis>)> {
    let comp = ComponentBasis::ridge(spec.clone())?;
    Ok((comp.clone(), vec![comp; p]))
}
