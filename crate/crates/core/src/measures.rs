//! Signed atomic measures on R^d and i.i.d. samples from kernel mixtures.
//!
//! A [`DiscreteMeasure`] is a finite list of `(weight, location)` atoms. It is
//! used for the true mixing law, for solver estimates and for particle systems.
//! Construction merges atoms sitting at bitwise-identical locations and drops
//! atoms whose weight is exactly zero; no other tolerance is applied.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernels::MixingKernelSpec;

/// One spike `weight * delta_location`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(rename = "w")]
    pub weight: f64,
    #[serde(rename = "t")]
    pub location: Vec<f64>,
}

impl Atom {
    pub fn new(weight: f64, location: Vec<f64>) -> Self {
        Self { weight, location }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr", into = "MeasureRepr")]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    dim: usize,
    atoms: Vec<Atom>,
}

impl TryFrom<MeasureRepr> for DiscreteMeasure {
    type Error = Error;

    fn try_from(repr: MeasureRepr) -> Result<Self> {
        DiscreteMeasure::new(repr.dim, repr.atoms)
    }
}

impl From<DiscreteMeasure> for MeasureRepr {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureRepr {
            dim: m.dim,
            atoms: m.atoms,
        }
    }
}

fn bitwise_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl DiscreteMeasure {
    /// Builds a measure, merging atoms at identical locations and dropping zero weights.
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for atom in atoms {
            check_dim(dim, atom.location.len())?;
            if !atom.weight.is_finite() || atom.location.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidMeasure(format!(
                    "non-finite atom ({}, {:?})",
                    atom.weight, atom.location
                )));
            }
            match merged
                .iter_mut()
                .find(|a| bitwise_eq(&a.location, &atom.location))
            {
                Some(existing) => existing.weight += atom.weight,
                None => merged.push(atom),
            }
        }
        merged.retain(|a| a.weight != 0.0);
        Ok(Self { dim, atoms: merged })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            atoms: Vec::new(),
        }
    }

    /// Convenience constructor for d = 1 from `(weight, location)` pairs.
    pub fn from_1d(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            1,
            pairs.iter().map(|&(w, t)| Atom::new(w, vec![t])).collect(),
        )
    }

    /// Builds a measure from parallel weight and location lists.
    pub fn from_parts(dim: usize, weights: &[f64], locations: &[Vec<f64>]) -> Result<Self> {
        if weights.len() != locations.len() {
            return Err(Error::LengthMismatch {
                expected: locations.len(),
                got: weights.len(),
            });
        }
        Self::new(
            dim,
            weights
                .iter()
                .zip(locations)
                .map(|(&w, t)| Atom::new(w, t.clone()))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.weight).collect()
    }

    pub fn locations(&self) -> Vec<Vec<f64>> {
        self.atoms.iter().map(|a| a.location.clone()).collect()
    }

    /// Signed total mass `sum_i w_i`.
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `sum_i |w_i|`.
    pub fn total_variation(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight.abs()).sum()
    }

    /// Returns `(mu_plus, mu_minus)`, both nonnegative, with `mu = mu_plus - mu_minus`.
    pub fn jordan_decompose(&self) -> (DiscreteMeasure, DiscreteMeasure) {
        let plus = self
            .atoms
            .iter()
            .filter(|a| a.weight > 0.0)
            .cloned()
            .collect();
        let minus = self
            .atoms
            .iter()
            .filter(|a| a.weight < 0.0)
            .map(|a| Atom::new(-a.weight, a.location.clone()))
            .collect();
        (
            DiscreteMeasure {
                dim: self.dim,
                atoms: plus,
            },
            DiscreteMeasure {
                dim: self.dim,
                atoms: minus,
            },
        )
    }

    /// Minimum pairwise Euclidean distance between atom locations.
    pub fn min_separation(&self) -> Result<f64> {
        if self.atoms.len() < 2 {
            return Err(Error::UndefinedSeparation(self.atoms.len()));
        }
        let mut best = f64::INFINITY;
        for (i, a) in self.atoms.iter().enumerate() {
            for b in &self.atoms[i + 1..] {
                best = best.min(distance(&a.location, &b.location));
            }
        }
        Ok(best)
    }

    /// Single-linkage merge of atoms closer than `radius`.
    ///
    /// Merged weight is the sum; merged location is the mean weighted by `|w|`.
    pub fn merge_close(&self, radius: f64) -> Result<DiscreteMeasure> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "merge radius must be nonnegative, got {radius}"
            )));
        }
        let n = self.atoms.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for i in 0..n {
            for j in i + 1..n {
                if distance(&self.atoms[i].location, &self.atoms[j].location) <= radius {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
        let mut clusters: Vec<(usize, Vec<usize>)> = Vec::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            match clusters.iter_mut().find(|(r, _)| *r == root) {
                Some((_, members)) => members.push(i),
                None => clusters.push((root, vec![i])),
            }
        }
        let atoms = clusters
            .into_iter()
            .map(|(_, members)| {
                if members.len() == 1 {
                    return self.atoms[members[0]].clone();
                }
                let weight: f64 = members.iter().map(|&i| self.atoms[i].weight).sum();
                let abs_total: f64 = members.iter().map(|&i| self.atoms[i].weight.abs()).sum();
                let mut location = vec![0.0; self.dim];
                for &i in &members {
                    let share = self.atoms[i].weight.abs() / abs_total;
                    for (l, x) in location.iter_mut().zip(&self.atoms[i].location) {
                        *l += share * x;
                    }
                }
                Atom::new(weight, location)
            })
            .collect();
        DiscreteMeasure::new(self.dim, atoms)
    }

    /// Drops atoms with `|w| <= threshold`.
    pub fn pruned(&self, threshold: f64) -> DiscreteMeasure {
        DiscreteMeasure {
            dim: self.dim,
            atoms: self
                .atoms
                .iter()
                .filter(|a| a.weight.abs() > threshold)
                .cloned()
                .collect(),
        }
    }

    /// Applies `x -> x + shift` to every location.
    pub fn translated(&self, shift: &[f64]) -> Result<DiscreteMeasure> {
        check_dim(self.dim, shift.len())?;
        DiscreteMeasure::new(
            self.dim,
            self.atoms
                .iter()
                .map(|a| {
                    Atom::new(
                        a.weight,
                        a.location.iter().zip(shift).map(|(x, s)| x + s).collect(),
                    )
                })
                .collect(),
        )
    }

    /// `true` when every weight is positive and the weights sum to one (within 1e-9).
    pub fn is_probability(&self) -> bool {
        !self.atoms.is_empty()
            && self.atoms.iter().all(|a| a.weight > 0.0)
            && (self.total_mass() - 1.0).abs() <= 1e-9
    }

    /// Per-coordinate `(min, max)` of the atom locations.
    pub fn bounding_box(&self) -> Option<Vec<(f64, f64)>> {
        bounding_box(self.atoms.iter().map(|a| a.location.as_slice()), self.dim)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV with header `weight,x1..xd`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["weight".to_string()];
        header.extend((1..=self.dim).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for atom in &self.atoms {
            let mut row = vec![atom.weight.to_string()];
            row.extend(atom.location.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let dim = r
            .headers()?
            .len()
            .checked_sub(1)
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::InvalidMeasure("measure CSV needs weight and x columns".into()))?;
        let mut atoms = Vec::new();
        for record in r.records() {
            let values = parse_row(&record?)?;
            atoms.push(Atom::new(values[0], values[1..].to_vec()));
        }
        DiscreteMeasure::new(dim, atoms)
    }
}

fn parse_row(record: &csv::StringRecord) -> Result<Vec<f64>> {
    record
        .iter()
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidMeasure(format!("bad number {s:?}: {e}")))
        })
        .collect()
}

pub(crate) fn bounding_box<'a>(
    points: impl Iterator<Item = &'a [f64]>,
    dim: usize,
) -> Option<Vec<(f64, f64)>> {
    let mut bbox: Option<Vec<(f64, f64)>> = None;
    for p in points {
        let b = bbox.get_or_insert_with(|| vec![(f64::INFINITY, f64::NEG_INFINITY); dim]);
        for (range, &x) in b.iter_mut().zip(p) {
            range.0 = range.0.min(x);
            range.1 = range.1.max(x);
        }
    }
    bbox
}

/// `n` points in R^d, plus the seed used to draw them (0 when loaded from disk).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    dim: usize,
    points: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Sample {
    pub fn new(dim: usize, points: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        for p in &points {
            check_dim(dim, p.len())?;
        }
        Ok(Self { dim, points, seed })
    }

    pub fn from_1d(values: &[f64]) -> Self {
        Self {
            dim: 1,
            points: values.iter().map(|&x| vec![x]).collect(),
            seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounding_box(&self) -> Option<Vec<(f64, f64)>> {
        bounding_box(self.points.iter().map(|p| p.as_slice()), self.dim)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in &self.points {
            for (acc, x) in m.iter_mut().zip(p) {
                *acc += x;
            }
        }
        let n = self.points.len().max(1) as f64;
        m.iter_mut().for_each(|x| *x /= n);
        m
    }

    pub fn translated(&self, shift: &[f64]) -> Result<Sample> {
        check_dim(self.dim, shift.len())?;
        Ok(Sample {
            dim: self.dim,
            points: self
                .points
                .iter()
                .map(|p| p.iter().zip(shift).map(|(x, s)| x + s).collect())
                .collect(),
            seed: self.seed,
        })
    }

    /// CSV with header `x1..xd`, one point per row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let header: Vec<String> = (1..=self.dim).map(|j| format!("x{j}")).collect();
        w.write_record(&header)?;
        for p in &self.points {
            w.write_record(p.iter().map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let dim = r.headers()?.len();
        if dim == 0 {
            return Err(Error::InvalidMeasure("sample CSV has no columns".into()));
        }
        let mut points = Vec::new();
        for record in r.records() {
            points.push(parse_row(&record?)?);
        }
        Sample::new(dim, points, 0)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Seeded generator used for every random draw in the crate (ChaCha20).
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Draws `n` i.i.d. points `X = t_K + E` with `K ~ weights(truth)` and `E ~ phi`.
pub fn sample_mixture(
    truth: &DiscreteMeasure,
    kernel: &MixingKernelSpec,
    n: usize,
    seed: u64,
) -> Result<Sample> {
    if !truth.is_probability() {
        return Err(Error::InvalidMeasure(
            "mixing law must have positive weights summing to one".into(),
        ));
    }
    check_dim(truth.dim(), kernel.dim())?;
    let mut rng = seeded_rng(seed);
    let cumulative: Vec<f64> = truth
        .atoms()
        .iter()
        .scan(0.0, |acc, a| {
            *acc += a.weight;
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().expect("probability measure is nonempty");
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * total;
        let k = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(cumulative.len() - 1);
        let noise = kernel.sample_noise(&mut rng)?;
        points.push(
            truth.atoms()[k]
                .location
                .iter()
                .zip(noise)
                .map(|(t, e)| t + e)
                .collect(),
        );
    }
    Sample::new(truth.dim(), points, seed)
}
