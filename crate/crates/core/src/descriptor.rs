//! Global descriptors: CLS-token selection or generalized-mean (GeM) pooling
//! of patch tokens, followed by L2 normalization.
//!
//! GeM pools each dimension `d` over the `N` patch rows:
//!
//! ```text
//! g_d = ( (1/N) * sum_i max(x_id, eps)^p )^(1/p)
//! ```
//!
//! `p = 1` is mean pooling and large `p` approaches max pooling. Entries are
//! clamped below at `eps` because transformer tokens can be negative and a
//! fractional power of a negative base is undefined.
//!
//! The power sum is evaluated relative to the per-dimension maximum `m`
//! (`m * (mean (x/m)^p)^(1/p)`), which is algebraically identical but does not
//! overflow for large `p`.

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::scalar::{dot, l2_norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMethod {
    Cls,
    Gem,
}

impl AggregationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMethod::Cls => "cls",
            AggregationMethod::Gem => "gem",
        }
    }
}

impl std::str::FromStr for AggregationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Self::Cls),
            "gem" => Ok(Self::Gem),
            other => Err(Error::InvalidConfig(format!(
                "unknown aggregator {other:?} (expected cls or gem)"
            ))),
        }
    }
}

/// Where the `1/N` factor sits in the GeM formula.
///
/// The two forms differ by a factor that depends only on `N`, so after L2
/// normalization they produce the same direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GemForm {
    /// `((1/N) sum x^p)^(1/p)`, the generalized mean proper.
    #[default]
    Standard,
    /// `(1/N) (sum x^p)^(1/p)`.
    PostRootMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    pub method: AggregationMethod,
    pub p: f64,
    pub clamp_eps: f64,
    pub gem_form: GemForm,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            method: AggregationMethod::Gem,
            p: 3.0,
            clamp_eps: 1e-6,
            gem_form: GemForm::Standard,
        }
    }
}

impl AggregationConfig {
    pub fn cls() -> Self {
        Self {
            method: AggregationMethod::Cls,
            ..Self::default()
        }
    }

    pub fn gem(p: f64) -> Self {
        Self {
            p,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "p must be finite and positive, got {}",
                self.p
            )));
        }
        if !(self.clamp_eps.is_finite() && self.clamp_eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "clamp_eps must be finite and positive, got {}",
                self.clamp_eps
            )));
        }
        Ok(())
    }

    /// The method tag a descriptor built with this config carries.
    pub fn aggregation(&self) -> Aggregation {
        match self.method {
            AggregationMethod::Cls => Aggregation::Cls,
            AggregationMethod::Gem => Aggregation::Gem { p: self.p },
        }
    }
}

/// How a descriptor was produced. `p` exists only for GeM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Aggregation {
    Cls,
    Gem { p: f64 },
}

impl Aggregation {
    pub fn method(&self) -> AggregationMethod {
        match self {
            Aggregation::Cls => AggregationMethod::Cls,
            Aggregation::Gem { .. } => AggregationMethod::Gem,
        }
    }

    pub fn p(&self) -> Option<f64> {
        match *self {
            Aggregation::Cls => None,
            Aggregation::Gem { p } => Some(p),
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Aggregation::Cls => write!(f, "cls"),
            Aggregation::Gem { p } => write!(f, "gem(p={p})"),
        }
    }
}

/// Unit-norm image descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor<T: Scalar> {
    pub image_id: String,
    pub aggregation: Aggregation,
    pub vec: Vec<T>,
}

impl<T: Scalar> GlobalDescriptor<T> {
    pub fn dim(&self) -> usize {
        self.vec.len()
    }

    /// Wraps an arbitrary vector, normalizing it.
    pub fn from_raw(
        image_id: impl Into<String>,
        aggregation: Aggregation,
        raw: Vec<T>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        let vec = normalized(raw, &image_id)?;
        Ok(Self {
            image_id,
            aggregation,
            vec,
        })
    }
}

/// Scales `v` to unit L2 norm.
pub fn normalized<T: Scalar>(mut v: Vec<T>, image_id: &str) -> Result<Vec<T>> {
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let norm = l2_norm(&v);
    if norm == T::zero() || !norm.is_finite() {
        return Err(Error::ZeroNorm {
            image_id: image_id.to_owned(),
        });
    }
    for x in &mut v {
        *x = *x / norm;
    }
    Ok(v)
}

pub fn aggregate_cls<T: Scalar>(features: &FeatureSet) -> Result<GlobalDescriptor<T>> {
    features.validate()?;
    let raw = features.cls.iter().map(|&x| T::of_f32(x)).collect();
    GlobalDescriptor::from_raw(features.image_id.clone(), Aggregation::Cls, raw)
}

/// Un-normalized GeM vector.
pub fn gem_pool<T: Scalar>(features: &FeatureSet, config: &AggregationConfig) -> Result<Vec<T>> {
    features.validate()?;
    config.validate()?;
    let dim = features.dim;
    let eps = T::of_f64(config.clamp_eps);
    let p = T::of_f64(config.p);
    let n = T::from_usize(features.n_patches).expect("patch count representable");
    let clamp = |x: f32| T::of_f32(x).max(eps);

    let mut peak = vec![eps; dim];
    for row in features.patch_rows() {
        for (m, &x) in peak.iter_mut().zip(row) {
            *m = m.max(clamp(x));
        }
    }

    let mut sums = vec![T::zero(); dim];
    for row in features.patch_rows() {
        for ((s, &m), &x) in sums.iter_mut().zip(&peak).zip(row) {
            *s = *s + (clamp(x) / m).powf(p);
        }
    }

    let inv_p = T::one() / p;
    let pooled = sums
        .into_iter()
        .zip(peak)
        .map(|(s, m)| match config.gem_form {
            GemForm::Standard => m * (s / n).powf(inv_p),
            GemForm::PostRootMean => m * s.powf(inv_p) / n,
        })
        .collect();
    Ok(pooled)
}

pub fn aggregate_gem<T: Scalar>(
    features: &FeatureSet,
    config: &AggregationConfig,
) -> Result<GlobalDescriptor<T>> {
    let raw = gem_pool(features, config)?;
    GlobalDescriptor::from_raw(
        features.image_id.clone(),
        Aggregation::Gem { p: config.p },
        raw,
    )
}

/// Dispatches on `config.method`.
pub fn aggregate<T: Scalar>(
    features: &FeatureSet,
    config: &AggregationConfig,
) -> Result<GlobalDescriptor<T>> {
    match config.method {
        AggregationMethod::Cls => aggregate_cls(features),
        AggregationMethod::Gem => aggregate_gem(features, config),
    }
}

pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if !a.iter().chain(b).all(|x| x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == T::zero() || nb == T::zero() {
        return Err(Error::ZeroNorm {
            image_id: String::new(),
        });
    }
    let cos = dot(a, b) / (na * nb);
    Ok(cos.max(-T::one()).min(T::one()))
}
