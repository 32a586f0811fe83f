//! Read-only analyses over learned codes: factor top-word profiles, word
//! decompositions, activation bars, factor edits, subset PCA and co-activation
//! slices, plus CSV writers for each.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::groups::{group_activation_with, read_labels, FactorGrouping, GroupAggregate};
use crate::linalg::sorted_symmetric_eigen;
use crate::neighbors::{Metric, NeighborIndex};
use crate::sparse_code::{Dictionary, SparseCodes};

pub const DEFAULT_PROFILE_MASS: f64 = 0.2;
/// A factor whose profile needs more than this share of the vocabulary is flagged.
pub const UNIDENTIFIABLE_VOCAB_FRACTION: f64 = 0.1;
pub const DEFAULT_DECOMPOSE_TOP: usize = 5;
pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub token: String,
    pub activation: f64,
    /// `f_i · α_i`.
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorProfile {
    pub factor_id: usize,
    pub top_words: Vec<ProfileEntry>,
    /// Share of the factor's total weighted activation covered by `top_words`.
    pub mass_fraction: f64,
    /// Number of words with a non-zero coefficient on the factor.
    pub active_words: usize,
    pub unidentifiable: bool,
    pub suggested_name: Option<String>,
}

fn check_factor(codes: &SparseCodes, factor: usize) -> Result<()> {
    if factor >= codes.factors() {
        return Err(Error::InvalidArgument(format!("factor {factor} >= {}", codes.factors())));
    }
    Ok(())
}

fn check_mass(mass: f64) -> Result<()> {
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::InvalidArgument(format!("mass {mass} must be in (0, 1]")));
    }
    Ok(())
}

/// Frequencies are normalized counts, so products that tie exactly in counts
/// can differ in the last bits. Rounding to 40 mantissa bits keeps those ties,
/// which then break by vocabulary index.
fn rank_key(v: f64) -> f64 {
    f64::from_bits((v.to_bits() + (1 << 11)) & !0xfff)
}

fn profile_from(es: &EmbeddingSet, factor: usize, mut active: Vec<(usize, f64)>, mass: f64) -> FactorProfile {
    let freq = es.freq();
    let weighted = |&(w, a): &(usize, f64)| freq[w] * a;
    active.sort_by(|x, y| rank_key(weighted(y)).total_cmp(&rank_key(weighted(x))).then(x.0.cmp(&y.0)));
    let total: f64 = active.iter().map(weighted).sum();
    let active_words = active.len();
    if total <= 0.0 {
        return FactorProfile {
            factor_id: factor,
            top_words: Vec::new(),
            mass_fraction: 0.0,
            active_words,
            unidentifiable: true,
            suggested_name: None,
        };
    }
    let target = mass * total - 1e-12 * total;
    let mut cumulative = 0.0;
    let mut top_words = Vec::new();
    for e in &active {
        cumulative += weighted(e);
        top_words.push(ProfileEntry { token: es.word(e.0).to_string(), activation: e.1, weighted: weighted(e) });
        if cumulative >= target {
            break;
        }
    }
    let unidentifiable = top_words.len() as f64 > UNIDENTIFIABLE_VOCAB_FRACTION * es.len() as f64;
    FactorProfile {
        factor_id: factor,
        top_words,
        mass_fraction: (cumulative / total).min(1.0),
        active_words,
        unidentifiable,
        suggested_name: None,
    }
}

/// Words ranked by `f_i · α_{i,factor}`, cut at the shortest prefix carrying
/// `mass` of the factor's total weighted activation.
pub fn factor_profile(codes: &SparseCodes, es: &EmbeddingSet, factor: usize, mass: f64) -> Result<FactorProfile> {
    check_factor(codes, factor)?;
    check_mass(mass)?;
    if codes.len() != es.len() {
        return Err(Error::Dimension(format!("{} codes for {} words", codes.len(), es.len())));
    }
    let active = (0..codes.len()).map(|w| (w, codes.get(w, factor))).filter(|&(_, a)| a > 0.0).collect();
    Ok(profile_from(es, factor, active, mass))
}

/// Profiles of every factor from one pass over the codes.
pub fn factor_profiles(codes: &SparseCodes, es: &EmbeddingSet, mass: f64) -> Result<Vec<FactorProfile>> {
    check_mass(mass)?;
    if codes.len() != es.len() {
        return Err(Error::Dimension(format!("{} codes for {} words", codes.len(), es.len())));
    }
    let mut by_factor: Vec<Vec<(usize, f64)>> = vec![Vec::new(); codes.factors()];
    for (w, col) in codes.columns().iter().enumerate() {
        for &(j, v) in col {
            if v > 0.0 {
                by_factor[j as usize].push((w, v as f64));
            }
        }
    }
    Ok(by_factor.into_par_iter().enumerate().map(|(j, active)| profile_from(es, j, active, mass)).collect())
}

/// Human-chosen names: per-factor labels first, then the label of the factor's group.
#[derive(Debug, Clone, Default)]
pub struct FactorNames<'a> {
    pub factors: BTreeMap<usize, String>,
    pub grouping: Option<&'a FactorGrouping>,
}

impl<'a> FactorNames<'a> {
    pub fn load(labels: Option<&Path>, grouping: Option<&'a FactorGrouping>) -> Result<Self> {
        let factors = labels.map(read_labels).transpose()?.unwrap_or_default();
        Ok(FactorNames { factors, grouping })
    }

    pub fn name(&self, factor: usize) -> Option<String> {
        self.factors.get(&factor).cloned().or_else(|| {
            let g = self.grouping?;
            g.label(g.group_of(factor)?).map(str::to_string)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub factor_id: usize,
    pub coefficient: f64,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub token: String,
    pub terms: Vec<Term>,
    /// ℓ₁ mass of the coefficients not listed ("others").
    pub residual_mass: f64,
    pub total_mass: f64,
    /// Coefficients divided by the word's ℓ₁ mass.
    pub normalized: bool,
}

/// The `top` largest coefficients of a word's code.
pub fn decompose_word(
    codes: &SparseCodes,
    es: &EmbeddingSet,
    names: &FactorNames<'_>,
    token: &str,
    top: usize,
    normalized: bool,
) -> Result<Decomposition> {
    let w = es.index_of(token)?;
    if w >= codes.len() {
        return Err(Error::Dimension(format!("no code for word {w}")));
    }
    let mut entries: Vec<(usize, f64)> =
        codes.column(w).iter().filter(|e| e.1 > 0.0).map(|&(j, v)| (j as usize, v as f64)).collect();
    entries.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let total = entries.iter().fold(0.0, |acc, e| acc + e.1);
    let scale = if normalized && total > 0.0 { 1.0 / total } else { 1.0 };
    let terms: Vec<Term> = entries
        .iter()
        .take(top)
        .map(|&(j, v)| Term { factor_id: j, coefficient: v * scale, name: names.name(j) })
        .collect();
    let residual = entries.iter().skip(top).fold(0.0, |acc, e| acc + e.1);
    Ok(Decomposition {
        token: token.to_string(),
        terms,
        residual_mass: residual * scale,
        total_mass: total * scale,
        normalized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BarTarget<'a> {
    Factor(usize),
    Group { grouping: &'a FactorGrouping, group: usize, aggregate: GroupAggregate },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bars {
    /// Known tokens in input order.
    pub values: Vec<(String, f64)>,
    pub unknown: Vec<String>,
}

/// Activation of each token on a factor or group. Unknown tokens are collected
/// separately rather than aborting.
pub fn activation_bars(codes: &SparseCodes, es: &EmbeddingSet, target: BarTarget<'_>, tokens: &[String]) -> Result<Bars> {
    match target {
        BarTarget::Factor(j) => check_factor(codes, j)?,
        BarTarget::Group { grouping, group, .. } if group >= grouping.k_clusters => {
            return Err(Error::InvalidArgument(format!("group {group} >= {}", grouping.k_clusters)));
        }
        BarTarget::Group { .. } => {}
    }
    let mut bars = Bars { values: Vec::new(), unknown: Vec::new() };
    for t in tokens {
        let Some(w) = es.vocab().get(t) else {
            bars.unknown.push(t.clone());
            continue;
        };
        let v = match target {
            BarTarget::Factor(j) => codes.get(w, j),
            BarTarget::Group { grouping, group, aggregate } => group_activation_with(codes, grouping, w, group, aggregate)?,
        };
        bars.values.push((t.clone(), v));
    }
    Ok(bars)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedWord {
    pub token: String,
    pub score: f64,
}

/// Nearest words to `x_token + Σ c_e φ_e`.
pub fn manipulate(
    es: &EmbeddingSet,
    dict: &Dictionary,
    token: &str,
    edits: &[(usize, f64)],
    metric: Metric,
    exclude_self: bool,
    k: usize,
) -> Result<Vec<RankedWord>> {
    let w = es.index_of(token)?;
    if dict.dim() != es.dim() {
        return Err(Error::Dimension(format!("dictionary dim {} vs embeddings {}", dict.dim(), es.dim())));
    }
    let mut v = es.vector(w);
    for &(j, c) in edits {
        if j >= dict.factors() {
            return Err(Error::InvalidArgument(format!("factor {j} >= {}", dict.factors())));
        }
        if !c.is_finite() {
            return Err(Error::NonFinite(format!("edit coefficient for factor {j}")));
        }
        v.axpy(c, &dict.atoms().column(j), 1.0);
    }
    let exclude: &[usize] = if exclude_self { &[w] } else { &[] };
    Ok(NeighborIndex::new(es)
        .top_k(&v, k, exclude, metric)
        .into_iter()
        .map(|n| RankedWord { token: es.word(n.index).to_string(), score: n.score })
        .collect())
}

/// Parses `factor:coef` edits such as `337:4` or `12:-2.5`.
pub fn parse_edit(s: &str) -> Result<(usize, f64)> {
    let bad = || Error::InvalidArgument(format!("edit `{s}` (expected FACTOR:COEF)"));
    let (f, c) = s.split_once(':').ok_or_else(bad)?;
    Ok((f.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

/// Relative size below which a principal component counts as absent.
const RANK_TOL: f64 = 1e-10;

/// Projects the mean-centered subset onto its top two principal directions.
/// The first non-zero loading of each direction is made positive. A subset of
/// rank one gets a zero second coordinate; identical points are an error.
pub fn pca_project(es: &EmbeddingSet, tokens: &[String]) -> Result<Vec<(String, [f64; 2])>> {
    let missing: Vec<String> = tokens.iter().filter(|t| es.vocab().get(t).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::UnknownTokens(missing));
    }
    if tokens.len() < 2 {
        return Err(Error::InvalidArgument("PCA needs at least 2 tokens".into()));
    }
    let idx: Vec<usize> = tokens.iter().map(|t| es.vocab().get(t).unwrap()).collect();
    let mut x = es.gather(&idx);
    let mean = x.column_mean();
    for mut c in x.column_iter_mut() {
        c -= &mean;
    }
    let cov = &x * x.transpose() / tokens.len() as f64;
    let (vals, vecs) = sorted_symmetric_eigen(cov)?;
    let n = vals.len();
    let top = vals[n - 1];
    if !(top > 0.0) || top <= RANK_TOL * x.norm_squared().max(f64::MIN_POSITIVE) / tokens.len() as f64 {
        return Err(Error::InvalidArgument("subset has rank 0 (all vectors identical)".into()));
    }
    let mut axes = Vec::with_capacity(2);
    for k in 0..2 {
        if n < k + 1 || vals[n - 1 - k] <= RANK_TOL * top {
            axes.push(None);
            continue;
        }
        let mut v = vecs.column(n - 1 - k).into_owned();
        if let Some(&first) = v.iter().find(|c| c.abs() > 1e-12) {
            if first < 0.0 {
                v.neg_mut();
            }
        }
        axes.push(Some(v));
    }
    Ok(tokens
        .iter()
        .zip(x.column_iter())
        .map(|(t, c)| {
            let coord = |a: &Option<nalgebra::DVector<f64>>| a.as_ref().map_or(0.0, |v| v.dot(&c));
            (t.clone(), [coord(&axes[0]), coord(&axes[1])])
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub factors: Vec<usize>,
    pub tokens: Vec<String>,
    /// `values[r][c]` = coefficient of `factors[r]` for `tokens[c]`.
    pub values: Vec<Vec<f64>>,
}

/// The rows of the code matrix for one group's factors, restricted to `tokens`.
pub fn coactivation_heatmap(
    codes: &SparseCodes,
    es: &EmbeddingSet,
    grouping: &FactorGrouping,
    group: usize,
    tokens: &[String],
) -> Result<Heatmap> {
    let factors = grouping.members(group);
    if factors.is_empty() {
        return Err(Error::InvalidArgument(format!("group {group} has no factors")));
    }
    let missing: Vec<String> = tokens.iter().filter(|t| es.vocab().get(t).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::UnknownTokens(missing));
    }
    let words: Vec<usize> = tokens.iter().map(|t| es.vocab().get(t).unwrap()).collect();
    let values = factors.iter().map(|&j| words.iter().map(|&w| codes.get(w, j)).collect()).collect();
    Ok(Heatmap { factors, tokens: tokens.to_vec(), values })
}

impl Heatmap {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.factors.len(), self.tokens.len(), |r, c| self.values[r][c])
    }
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let to_io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    w.write_record(header).map_err(to_io)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_profiles_csv(profiles: &[FactorProfile], path: impl AsRef<Path>) -> Result<()> {
    let rows = profiles.iter().flat_map(|p| {
        p.top_words.iter().enumerate().map(move |(rank, e)| {
            vec![
                p.factor_id.to_string(),
                rank.to_string(),
                e.token.clone(),
                e.activation.to_string(),
                e.weighted.to_string(),
                p.mass_fraction.to_string(),
                p.unidentifiable.to_string(),
            ]
        })
    });
    write_csv(
        path.as_ref(),
        &["factor", "rank", "token", "activation", "weighted", "mass_fraction", "unidentifiable"],
        rows,
    )
}

pub fn write_decomposition_csv(d: &Decomposition, path: impl AsRef<Path>) -> Result<()> {
    let mut rows: Vec<Vec<String>> = d
        .terms
        .iter()
        .map(|t| vec![t.factor_id.to_string(), t.name.clone().unwrap_or_default(), t.coefficient.to_string()])
        .collect();
    rows.push(vec!["others".into(), String::new(), d.residual_mass.to_string()]);
    write_csv(path.as_ref(), &["factor", "name", "coefficient"], rows)
}

pub fn write_bars_csv(values: &[(String, f64)], path: impl AsRef<Path>) -> Result<()> {
    write_csv(path.as_ref(), &["token", "activation"], values.iter().map(|(t, v)| vec![t.clone(), v.to_string()]))
}

pub fn write_neighbors_csv(ranked: &[RankedWord], path: impl AsRef<Path>) -> Result<()> {
    let rows = ranked.iter().enumerate().map(|(i, r)| vec![(i + 1).to_string(), r.token.clone(), r.score.to_string()]);
    write_csv(path.as_ref(), &["rank", "token", "score"], rows)
}

pub fn write_projection_csv(points: &[(String, [f64; 2])], path: impl AsRef<Path>) -> Result<()> {
    let rows = points.iter().map(|(t, [x, y])| vec![t.clone(), x.to_string(), y.to_string()]);
    write_csv(path.as_ref(), &["token", "pc1", "pc2"], rows)
}

pub fn write_heatmap_csv(h: &Heatmap, path: impl AsRef<Path>) -> Result<()> {
    let mut header = vec!["factor"];
    header.extend(h.tokens.iter().map(String::as_str));
    let rows = h.factors.iter().zip(&h.values).map(|(f, row)| {
        std::iter::once(f.to_string()).chain(row.iter().map(|v| v.to_string())).collect::<Vec<_>>()
    });
    write_csv(path.as_ref(), &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_code::{fista_infer, sparsify};
    use crate::synthetic::planted_pairs;
    use nalgebra::{DVector, SymmetricEigen};
    use proptest::prelude::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn es_from(cols: &[&[f64]], names: &[&str]) -> EmbeddingSet {
        let cols: Vec<DVector<f64>> = cols.iter().map(|c| DVector::from_column_slice(c)).collect();
        EmbeddingSet::from_columns(strs(names), &cols, "t").unwrap()
    }

    fn three_words() -> (EmbeddingSet, SparseCodes) {
        let es = es_from(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]], &["a", "b", "c"]);
        let codes = SparseCodes::new(2, vec![vec![(0, 0.6)], vec![(0, 0.3), (1, 1.0)], vec![(0, 0.1)]]).unwrap();
        (es, codes)
    }

    #[test]
    fn profile_prefix() {
        let (es, codes) = three_words();
        let p = factor_profile(&codes, &es, 0, 0.2).unwrap();
        assert_eq!(p.top_words.len(), 1);
        assert_eq!(p.top_words[0].token, "a");
        assert!((p.mass_fraction - 0.6).abs() < 1e-6);
        let p = factor_profile(&codes, &es, 0, 0.8).unwrap();
        assert_eq!(p.top_words.iter().map(|e| e.token.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        let p = factor_profile(&codes, &es, 1, 0.2).unwrap();
        assert_eq!((p.top_words.len(), p.mass_fraction), (1, 1.0));
        assert!(factor_profile(&codes, &es, 2, 0.2).is_err());
        assert!(factor_profile(&codes, &es, 0, 0.0).is_err());
        assert_eq!(factor_profiles(&codes, &es, 0.8).unwrap()[0], factor_profile(&codes, &es, 0, 0.8).unwrap());
    }

    #[test]
    fn dead_and_diffuse_factors_are_flagged() {
        let (es, _) = three_words();
        let dead = SparseCodes::new(2, vec![vec![(0, 1.0)], vec![], vec![]]).unwrap();
        let p = factor_profile(&dead, &es, 1, 0.2).unwrap();
        assert!(p.unidentifiable && p.top_words.is_empty());

        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let cols: Vec<DVector<f64>> = (0..20).map(|i| DVector::from_vec(vec![1.0, i as f64])).collect();
        let es = EmbeddingSet::from_columns(words, &cols, "t").unwrap();
        let flat = SparseCodes::new(1, (0..20).map(|_| vec![(0, 1.0)]).collect()).unwrap();
        // 0.2 of 20 equal words needs 4 > 2 words
        assert!(factor_profile(&flat, &es, 0, 0.2).unwrap().unidentifiable);
        assert!(!factor_profile(&flat, &es, 0, 0.1).unwrap().unidentifiable);
    }

    #[test]
    fn profile_uses_frequency_weighting() {
        let (es, codes) = three_words();
        let es = es.with_raw_weights(vec![1.0, 10.0, 1.0]).unwrap();
        assert_eq!(factor_profile(&codes, &es, 0, 0.2).unwrap().top_words[0].token, "b");
    }

    #[test]
    fn decomposition_terms() {
        let (es, codes) = three_words();
        let mut names = FactorNames::default();
        names.factors.insert(1, "second".into());
        let d = decompose_word(&codes, &es, &names, "b", 5, false).unwrap();
        assert_eq!(d.terms.len(), 2);
        assert_eq!((d.terms[0].factor_id, d.terms[0].name.as_deref()), (1, Some("second")));
        assert_eq!(d.residual_mass, 0.0);
        let d = decompose_word(&codes, &es, &names, "b", 1, true).unwrap();
        assert!((d.terms[0].coefficient - 1.0 / 1.3).abs() < 1e-6);
        assert!((d.residual_mass - 0.3 / 1.3).abs() < 1e-6);
        assert!(matches!(decompose_word(&codes, &es, &names, "zz", 5, false), Err(Error::UnknownToken(_))));

        let empty = SparseCodes::empty(2, 3);
        let d = decompose_word(&empty, &es, &names, "a", 5, false).unwrap();
        assert!(d.terms.is_empty() && d.residual_mass == 0.0);
    }

    #[test]
    fn group_labels_name_terms() {
        let (es, codes) = three_words();
        let mut g = FactorGrouping::new(vec![0, 1], 2).unwrap();
        g.labels.insert(1, "group-one".into());
        let names = FactorNames { factors: BTreeMap::new(), grouping: Some(&g) };
        let d = decompose_word(&codes, &es, &names, "b", 5, false).unwrap();
        assert_eq!(d.terms[0].name.as_deref(), Some("group-one"));
        assert_eq!(d.terms[1].name, None);
    }

    #[test]
    fn planted_word_is_recovered() {
        // orthonormal atoms, x = 0.7 φ_a + 0.3 φ_b, small λ: coefficients shrink by λ
        let phi = DMatrix::<f64>::identity(6, 6);
        let dict = Dictionary::new(phi, 0.01).unwrap();
        let x = DMatrix::from_column_slice(6, 1, &[0.0, 0.7, 0.0, 0.0, 0.3, 0.0]);
        let dense = fista_infer(&dict, &x, 500, 0.0).unwrap();
        let codes = sparsify(&dense, 1e-6).unwrap();
        let es = es_from(&[&[0.0, 0.7, 0.0, 0.0, 0.3, 0.0]], &["w"]);
        let d = decompose_word(&codes, &es, &FactorNames::default(), "w", 5, false).unwrap();
        let got: Vec<(usize, f64)> = d.terms.iter().map(|t| (t.factor_id, t.coefficient)).collect();
        assert_eq!(got.len(), 2);
        assert_eq!((got[0].0, got[1].0), (1, 4));
        assert!((got[0].1 - 0.7).abs() < 0.05 && (got[1].1 - 0.3).abs() < 0.05);
    }

    #[test]
    fn bars_report_unknown_tokens() {
        let (es, codes) = three_words();
        let bars = activation_bars(&codes, &es, BarTarget::Factor(0), &strs(&["c", "nope", "a"])).unwrap();
        assert_eq!(bars.values, vec![("c".to_string(), 0.10000000149011612), ("a".to_string(), 0.6000000238418579)]);
        assert_eq!(bars.unknown, strs(&["nope"]));
        let empty = SparseCodes::empty(2, 3);
        let bars = activation_bars(&empty, &es, BarTarget::Factor(1), &strs(&["a", "b"])).unwrap();
        assert!(bars.values.iter().all(|v| v.1 == 0.0));

        let g = FactorGrouping::new(vec![0, 0], 1).unwrap();
        let target = BarTarget::Group { grouping: &g, group: 0, aggregate: GroupAggregate::Sum };
        let bars = activation_bars(&codes, &es, target, &strs(&["b"])).unwrap();
        assert!((bars.values[0].1 - 1.3).abs() < 1e-6);
        let bad = BarTarget::Group { grouping: &g, group: 3, aggregate: GroupAggregate::Sum };
        assert!(activation_bars(&codes, &es, bad, &strs(&["b"])).is_err());
    }

    #[test]
    fn identity_edit_returns_self() {
        let h = planted_pairs(10, 20, 10, 20, 3.0, 1).unwrap();
        for metric in [Metric::Cosine, Metric::Euclidean] {
            for w in ["base0", "derived3", "other7"] {
                let r = manipulate(&h.embeddings, &h.dictionary, w, &[], metric, false, 10).unwrap();
                assert_eq!(r[0].token, w);
                assert_eq!(r.len(), 10);
                let r = manipulate(&h.embeddings, &h.dictionary, w, &[], metric, true, 10).unwrap();
                assert!(r.iter().all(|n| n.token != w));
            }
        }
    }

    #[test]
    fn removing_a_factor_lands_on_the_base_word() {
        let h = planted_pairs(30, 40, 15, 40, 3.0, 2).unwrap();
        for (base, derived) in &h.pairs {
            let r = manipulate(&h.embeddings, &h.dictionary, derived, &[(h.factor, -3.0)], Metric::Cosine, true, 10).unwrap();
            assert_eq!(&r[0].token, base);
            let r = manipulate(&h.embeddings, &h.dictionary, base, &[(h.factor, 3.0)], Metric::Euclidean, true, 10).unwrap();
            assert_eq!(&r[0].token, derived);
        }
        assert!(manipulate(&h.embeddings, &h.dictionary, "base0", &[(99, 1.0)], Metric::Cosine, true, 10).is_err());
        assert_eq!(parse_edit("337:4").unwrap(), (337, 4.0));
        assert_eq!(parse_edit("2:-1.5").unwrap(), (2, -1.5));
        assert!(parse_edit("x").is_err());
    }

    #[test]
    fn pca_small_cases() {
        let es = es_from(
            &[&[1.0, 2.0, 0.0], &[2.0, 4.0, 0.0], &[3.0, 6.0, 0.0], &[-1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[5.0, 5.0, 5.0]],
            &["p1", "p2", "p3", "m", "n", "same"],
        );
        let out = pca_project(&es, &strs(&["p1", "p2", "p3"])).unwrap();
        for (_, [_, y]) in &out {
            assert!(y.abs() < 1e-9);
        }
        let span = 5f64.sqrt();
        assert!((out[0].1[0] + span).abs() < 1e-9 && (out[2].1[0] - span).abs() < 1e-9);

        let out = pca_project(&es, &strs(&["m", "n"])).unwrap();
        assert!((out[0].1[0] + 1.0).abs() < 1e-12 && (out[1].1[0] - 1.0).abs() < 1e-12);
        assert_eq!(out[0].1[1], 0.0);

        assert!(pca_project(&es, &strs(&["same"])).is_err());
        assert!(pca_project(&es, &strs(&["same", "same"])).is_err());
        assert!(matches!(pca_project(&es, &strs(&["m", "q"])), Err(Error::UnknownTokens(_))));
    }

    /// Reconstruction error of projecting centered `x` onto the span of `basis` columns.
    fn residual(x: &DMatrix<f64>, basis: &DMatrix<f64>) -> f64 {
        (x - basis * (basis.transpose() * x)).norm_squared()
    }

    #[test]
    fn pca_plane_is_optimal() {
        let data: Vec<Vec<f64>> = (0..7)
            .map(|i| (0..5).map(|k| ((i * 7 + k * 3) % 11) as f64 / 3.0 - (k as f64) * 0.2 * i as f64).collect())
            .collect();
        let names: Vec<String> = (0..7).map(|i| format!("w{i}")).collect();
        let cols: Vec<DVector<f64>> = data.iter().map(|c| DVector::from_vec(c.clone())).collect();
        let es = EmbeddingSet::from_columns(names.clone(), &cols, "t").unwrap();
        let out = pca_project(&es, &names).unwrap();
        let mut x = es.gather(&(0..7).collect::<Vec<_>>());
        let mean = x.column_mean();
        for mut c in x.column_iter_mut() {
            c -= &mean;
        }
        let kept: f64 = out.iter().map(|(_, [a, b])| a * a + b * b).sum();
        let ours = x.norm_squared() - kept;

        // every plane spanned by two left singular vectors of the centered data
        let svd = x.clone().svd(true, false);
        let u = svd.u.unwrap();
        let eig = SymmetricEigen::new(&x * x.transpose());
        let mut sorted: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let trailing: f64 = sorted[2..].iter().sum();
        assert!((ours - trailing).abs() < 1e-8 * x.norm_squared());
        for i in 0..u.ncols() {
            for j in i + 1..u.ncols() {
                let basis = DMatrix::from_columns(&[u.column(i), u.column(j)]);
                assert!(ours <= residual(&x, &basis) + 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn pca_ignores_token_order(seed in 0u64..1000) {
            let names: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
            let cols: Vec<DVector<f64>> = (0..6)
                .map(|i| DVector::from_fn(4, |k, _| (((seed as usize + 3 * i + 5 * k) * 2654435761usize) % 1000) as f64 / 100.0))
                .collect();
            let es = EmbeddingSet::from_columns(names.clone(), &cols, "t").unwrap();
            let a = pca_project(&es, &names).unwrap();
            let mut rev = names.clone();
            rev.reverse();
            let b = pca_project(&es, &rev).unwrap();
            for (p, q) in a.iter().zip(b.iter().rev()) {
                prop_assert_eq!(&p.0, &q.0);
                prop_assert!((p.1[0] - q.1[0]).abs() < 1e-6 && (p.1[1] - q.1[1]).abs() < 1e-6, "{:?} vs {:?}", p, q);
            }
        }

        #[test]
        fn decomposition_conserves_mass(vals in proptest::collection::vec(0.0f32..2.0, 8), top in 0usize..10, norm in any::<bool>()) {
            let col: Vec<(u32, f32)> = vals.iter().enumerate().filter(|e| *e.1 > 0.0).map(|(j, &v)| (j as u32, v)).collect();
            let codes = SparseCodes::new(8, vec![col]).unwrap();
            let es = es_from(&[&[1.0, 0.0]], &["w"]);
            let d = decompose_word(&codes, &es, &FactorNames::default(), "w", top, norm).unwrap();
            let listed: f64 = d.terms.iter().map(|t| t.coefficient).sum();
            let total = if norm && codes.l1(0) > 0.0 { 1.0 } else { codes.l1(0) };
            prop_assert!((listed + d.residual_mass - total).abs() < 1e-6);
            prop_assert!(d.terms.windows(2).all(|w| w[0].coefficient >= w[1].coefficient));
            prop_assert!(d.terms.iter().all(|t| t.coefficient > 0.0));
        }

        #[test]
        fn profile_prefix_is_minimal(vals in proptest::collection::vec(0.01f32..1.0, 12), mass in 0.05f64..1.0) {
            let names: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
            let cols: Vec<DVector<f64>> = (0..12).map(|i| DVector::from_vec(vec![i as f64, 1.0])).collect();
            let es = EmbeddingSet::from_columns(names, &cols, "t").unwrap();
            let codes = SparseCodes::new(1, vals.iter().map(|&v| vec![(0, v)]).collect()).unwrap();
            let p = factor_profile(&codes, &es, 0, mass).unwrap();
            let total: f64 = vals.iter().map(|&v| v as f64 / 12.0).sum();
            let kept: f64 = p.top_words.iter().map(|e| e.weighted).sum();
            let without_last = kept - p.top_words.last().unwrap().weighted;
            prop_assert!(kept >= mass * total - 1e-9);
            prop_assert!(without_last < mass * total);
            prop_assert!(p.top_words.windows(2).all(|w| w[0].weighted >= w[1].weighted));
            prop_assert!((0.0..=1.0).contains(&p.mass_fraction));
        }
    }

    #[test]
    fn heatmap_slice() {
        let (es, codes) = three_words();
        let g = FactorGrouping::new(vec![0, 1], 2).unwrap();
        let h = coactivation_heatmap(&codes, &es, &g, 0, &strs(&["a", "b", "c"])).unwrap();
        let bars = activation_bars(&codes, &es, BarTarget::Factor(0), &strs(&["a", "b", "c"])).unwrap();
        assert_eq!(h.values[0], bars.values.iter().map(|v| v.1).collect::<Vec<_>>());
        let g2 = FactorGrouping::new(vec![0, 0], 2).unwrap();
        assert!(coactivation_heatmap(&codes, &es, &g2, 1, &strs(&["a"])).is_err());
        let empty = SparseCodes::empty(2, 3);
        let h = coactivation_heatmap(&empty, &es, &g2, 0, &strs(&["a", "c"])).unwrap();
        assert_eq!(h.to_matrix(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn csv_outputs_have_headers() {
        let dir = tempfile::tempdir().unwrap();
        let (es, codes) = three_words();
        let p = factor_profiles(&codes, &es, 1.0).unwrap();
        write_profiles_csv(&p, dir.path().join("p.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
        assert!(text.starts_with("factor,rank,token,activation,weighted"));
        let d = decompose_word(&codes, &es, &FactorNames::default(), "b", 1, false).unwrap();
        write_decomposition_csv(&d, dir.path().join("d.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().last().unwrap().starts_with("others"));
        let g = FactorGrouping::new(vec![0, 0], 1).unwrap();
        let h = coactivation_heatmap(&codes, &es, &g, 0, &strs(&["a", "b"])).unwrap();
        write_heatmap_csv(&h, dir.path().join("h.csv")).unwrap();
        assert!(std::fs::read_to_string(dir.path().join("h.csv")).unwrap().starts_with("factor,a,b\n"));
    }
}
