//! Registered persons: per-class mean embeddings, cosine lookup and a small
//! on-disk format (tab-separated index followed by one FTNS1 tensor).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Cursor, Write};
use std::path::Path;

use chrono::NaiveDateTime;

use crate::data::{LabeledImage, OcclusionClass};
use crate::error::{Error, Result};
use crate::model::network::{normalize, Model};
use crate::tensor::Tensor;

pub const GALLERY_MAGIC: &str = "FGAL1";
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Running mean of unit embeddings for one (person, class) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub mean: Tensor,
    /// `mean` rescaled to unit length; this is what probes are compared to.
    pub unit: Tensor,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub person: String,
    pub classes: BTreeMap<OcclusionClass, Prototype>,
    /// Time of the first enrollment.
    pub enrolled_at: NaiveDateTime,
}

/// Best gallery match for a probe.
#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub person: String,
    pub class: OcclusionClass,
    pub cosine: f64,
    /// `50 · (1 + cosine)`, in `[0, 100]`.
    pub score: f64,
}

pub fn match_score(cosine: f64) -> f64 {
    (50.0 * (1.0 + cosine)).clamp(0.0, 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    dim: usize,
    entries: BTreeMap<String, GalleryEntry>,
}

impl Gallery {
    pub fn new(dim: usize) -> Self {
        Gallery {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, person: &str) -> Option<&GalleryEntry> {
        self.entries.get(person)
    }

    /// Entries in lexicographic person order.
    pub fn entries(&self) -> impl Iterator<Item = &GalleryEntry> {
        self.entries.values()
    }

    fn unit_input(&self, e: &Tensor) -> Result<Tensor> {
        if e.shape() != [self.dim] {
            return Err(Error::shape("gallery embedding", e.shape(), &[self.dim]));
        }
        normalize(e)
    }

    /// Adds one embedding with the incremental update `m += (e − m) / n`.
    pub fn enroll_embedding(&mut self, person: &str, class: OcclusionClass, embedding: &Tensor, at: NaiveDateTime) -> Result<()> {
        let e = self.unit_input(embedding)?;
        let entry = self.entry_mut(person, at)?;
        let proto = match entry.classes.get_mut(&class) {
            Some(p) => {
                p.count += 1;
                let inv = 1.0 / p.count as f64;
                for (m, v) in p.mean.data_mut().iter_mut().zip(e.data()) {
                    *m += (v - *m) * inv;
                }
                p
            }
            None => entry.classes.entry(class).or_insert(Prototype {
                unit: e.clone(),
                mean: e,
                count: 1,
            }),
        };
        proto.unit = normalize(&proto.mean)?;
        Ok(())
    }

    /// Adds several embeddings at once as `(count·m + Σe) / (count + n)`.
    pub fn enroll_embeddings(&mut self, person: &str, class: OcclusionClass, embeddings: &[Tensor], at: NaiveDateTime) -> Result<()> {
        if embeddings.is_empty() {
            return Err(Error::InvalidArgument(format!("no images to enroll for {person}")));
        }
        let units = embeddings.iter().map(|e| self.unit_input(e)).collect::<Result<Vec<_>>>()?;
        let dim = self.dim;
        let entry = self.entry_mut(person, at)?;
        let (mut sum, old) = match entry.classes.get(&class) {
            Some(p) => (p.mean.scale(p.count as f64), p.count),
            None => (Tensor::zeros(&[dim]), 0),
        };
        for u in &units {
            sum.add_assign(u)?;
        }
        let count = old + units.len() as u64;
        let mean = sum.scale(1.0 / count as f64);
        let unit = normalize(&mean)?;
        entry.classes.insert(class, Prototype { mean, unit, count });
        Ok(())
    }

    fn entry_mut(&mut self, person: &str, at: NaiveDateTime) -> Result<&mut GalleryEntry> {
        if person.is_empty() || person.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidArgument(format!("unusable person name {person:?}")));
        }
        Ok(self.entries.entry(person.to_string()).or_insert_with(|| GalleryEntry {
            person: person.to_string(),
            classes: BTreeMap::new(),
            enrolled_at: at,
        }))
    }

    /// Embeds and enrolls each image under its own occlusion label.
    pub fn enroll(&mut self, person: &str, images: &[LabeledImage], model: &Model, at: NaiveDateTime) -> Result<usize> {
        if images.is_empty() {
            return Err(Error::InvalidArgument(format!("no images to enroll for {person}")));
        }
        for img in images {
            if img.person != person {
                return Err(Error::InvalidArgument(format!(
                    "{} belongs to {}, not {person}",
                    img.source.display(),
                    img.person
                )));
            }
        }
        for img in images {
            let e = model.embed(&img.pixels)?;
            self.enroll_embedding(person, img.occlusion, &e, at)?;
        }
        Ok(images.len())
    }

    /// Highest cosine over all prototypes, optionally restricted to one
    /// class. Ties go to the lexicographically first person.
    pub fn identify_embedding(&self, probe: &Tensor, class: Option<OcclusionClass>) -> Result<Option<Identification>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyGallery);
        }
        let p = self.unit_input(probe)?;
        let mut best: Option<Identification> = None;
        for entry in self.entries.values() {
            for (&c, proto) in &entry.classes {
                if class.is_some_and(|want| want != c) {
                    continue;
                }
                let cos = p.dot(&proto.unit)?;
                if best.as_ref().is_none_or(|b| cos > b.cosine) {
                    best = Some(Identification {
                        person: entry.person.clone(),
                        class: c,
                        cosine: cos,
                        score: match_score(cos),
                    });
                }
            }
        }
        Ok(best)
    }

    pub fn identify(&self, model: &Model, image: &Tensor) -> Result<Identification> {
        let e = model.embed(image)?;
        self.identify_embedding(&e, None)?.ok_or(Error::EmptyGallery)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut rows = Vec::new();
        let mut means = Vec::new();
        for entry in self.entries.values() {
            for (c, p) in &entry.classes {
                rows.push(format!(
                    "{}\t{}\t{}\t{}",
                    entry.person,
                    c.code(),
                    p.count,
                    entry.enrolled_at.format(TIMESTAMP_FORMAT)
                ));
                means.extend_from_slice(p.mean.data());
            }
        }
        let mut out = Vec::new();
        let _ = write!(out, "{GALLERY_MAGIC}\n{} {}\n", rows.len(), self.dim);
        for r in rows {
            let _ = writeln!(out, "{r}");
        }
        let t = Tensor::new(vec![means.len() / self.dim.max(1), self.dim], means).expect("gallery tensor extents");
        let _ = t.write_to(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("gallery file: {m}"));
        let mut r = Cursor::new(bytes);
        let mut line = String::new();
        let mut next = |r: &mut Cursor<&[u8]>, what: &str| -> Result<String> {
            line.clear();
            r.read_line(&mut line).map_err(|_| bad(what))?;
            if !line.ends_with('\n') {
                return Err(bad(&format!("truncated {what}")));
            }
            Ok(line.trim_end().to_string())
        };
        if next(&mut r, "magic")? != GALLERY_MAGIC {
            return Err(bad("bad magic"));
        }
        let head = next(&mut r, "header")?;
        let (n, dim) = head
            .split_once(' ')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .ok_or_else(|| bad("header"))?;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let l = next(&mut r, "index row")?;
            let f: Vec<&str> = l.split('\t').collect();
            let [person, code, count, ts] = f[..] else {
                return Err(bad("index row"));
            };
            let class = code.parse().ok().and_then(OcclusionClass::from_code).ok_or_else(|| bad("class code"))?;
            let count: u64 = count.parse().map_err(|_| bad("count"))?;
            let at = NaiveDateTime::parse_from_str(ts, TIMESTAMP_FORMAT).map_err(|_| bad("timestamp"))?;
            rows.push((person.to_string(), class, count, at));
        }
        let t = Tensor::read_from(&mut r)?;
        if t.shape() != [n, dim] {
            return Err(Error::shape("gallery tensor", t.shape(), &[n, dim]));
        }
        let mut g = Gallery::new(dim);
        for ((person, class, count, at), mean) in rows.into_iter().zip(t.data().chunks_exact(dim.max(1))) {
            let mean = Tensor::vector(mean.to_vec());
            let unit = normalize(&mean)?;
            g.entry_mut(&person, at)?.classes.insert(class, Prototype { mean, unit, count });
        }
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at() -> NaiveDateTime {
        NaiveDateTime::parse_from_str("2021-06-25T10:30:00", TIMESTAMP_FORMAT).unwrap()
    }

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec())
    }

    #[test]
    fn single_enrollment_is_the_mean() {
        let mut g = Gallery::new(3);
        g.enroll_embedding("ana", OcclusionClass::Face, &v(&[0.0, 0.6, 0.8]), at()).unwrap();
        let p = &g.entry("ana").unwrap().classes[&OcclusionClass::Face];
        assert_eq!(p.mean, v(&[0.0, 0.6, 0.8]));
        assert_eq!(p.count, 1);
    }

    #[test]
    fn repeated_image_keeps_the_mean() {
        let mut g = Gallery::new(2);
        let e = v(&[0.6, 0.8]);
        g.enroll_embedding("ana", OcclusionClass::Scarf, &e, at()).unwrap();
        g.enroll_embedding("ana", OcclusionClass::Scarf, &e, at()).unwrap();
        let p = &g.entry("ana").unwrap().classes[&OcclusionClass::Scarf];
        assert_eq!(p.mean, e);
        assert_eq!(p.count, 2);
    }

    #[test]
    fn two_images_mean_then_renormalise() {
        let mut g = Gallery::new(2);
        g.enroll_embedding("ana", OcclusionClass::Hand, &v(&[1.0, 0.0]), at()).unwrap();
        g.enroll_embedding("ana", OcclusionClass::Hand, &v(&[0.0, 1.0]), at()).unwrap();
        let p = &g.entry("ana").unwrap().classes[&OcclusionClass::Hand];
        assert_eq!(p.mean, v(&[0.5, 0.5]));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.unit.data()[0] - h).abs() < 1e-15 && (p.unit.data()[1] - h).abs() < 1e-15);
    }

    #[test]
    fn scores_for_identical_and_orthogonal_probes() {
        let mut g = Gallery::new(2);
        g.enroll_embedding("ana", OcclusionClass::Face, &v(&[1.0, 0.0]), at()).unwrap();
        let m = g.identify_embedding(&v(&[3.0, 0.0]), None).unwrap().unwrap();
        assert_eq!((m.person.as_str(), m.score), ("ana", 100.0));
        let m = g.identify_embedding(&v(&[0.0, 2.0]), None).unwrap().unwrap();
        assert_eq!(m.score, 50.0);
    }

    #[test]
    fn ties_go_to_first_name() {
        let mut g = Gallery::new(2);
        for p in ["zed", "bea", "mia"] {
            g.enroll_embedding(p, OcclusionClass::Face, &v(&[1.0, 0.0]), at()).unwrap();
        }
        assert_eq!(g.identify_embedding(&v(&[1.0, 1.0]), None).unwrap().unwrap().person, "bea");
    }

    #[test]
    fn class_restriction_and_empty_gallery() {
        let mut g = Gallery::new(2);
        assert!(matches!(g.identify_embedding(&v(&[1.0, 0.0]), None), Err(Error::EmptyGallery)));
        g.enroll_embedding("ana", OcclusionClass::Face, &v(&[1.0, 0.0]), at()).unwrap();
        g.enroll_embedding("bob", OcclusionClass::Scarf, &v(&[0.0, 1.0]), at()).unwrap();
        let m = g.identify_embedding(&v(&[1.0, 0.1]), Some(OcclusionClass::Scarf)).unwrap().unwrap();
        assert_eq!(m.person, "bob");
        assert!(g.identify_embedding(&v(&[1.0, 0.0]), Some(OcclusionClass::Hand)).unwrap().is_none());
    }

    #[test]
    fn rejects_empty_batch_and_bad_names() {
        let mut g = Gallery::new(2);
        assert!(g.enroll_embeddings("ana", OcclusionClass::Face, &[], at()).is_err());
        assert!(g.enroll_embedding("a\tb", OcclusionClass::Face, &v(&[1.0, 0.0]), at()).is_err());
        assert!(g.enroll_embedding("ana", OcclusionClass::Face, &v(&[1.0, 0.0, 0.0]), at()).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let mut g = Gallery::new(3);
        g.enroll_embedding("ana", OcclusionClass::Face, &v(&[1.0, 2.0, 2.0]), at()).unwrap();
        g.enroll_embedding("ana", OcclusionClass::Face, &v(&[0.0, 0.0, 1.0]), at()).unwrap();
        g.enroll_embedding("bob", OcclusionClass::Object, &v(&[0.0, 1.0, 0.0]), at()).unwrap();
        let bytes = g.to_bytes();
        let back = Gallery::from_bytes(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in g.entries().zip(back.entries()) {
            assert_eq!(a.person, b.person);
            assert_eq!(a.enrolled_at, b.enrolled_at);
            for ((ca, pa), (cb, pb)) in a.classes.iter().zip(&b.classes) {
                assert_eq!(ca, cb);
                assert_eq!(pa.count, pb.count);
                for (x, y) in pa.mean.data().iter().zip(pb.mean.data()) {
                    assert!((x - y).abs() < 1e-7);
                }
            }
        }
        assert!(Gallery::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Gallery::from_bytes(b"nope\n").is_err());
    }

    proptest! {
        #[test]
        fn one_by_one_equals_batch(raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..12)) {
            let es: Vec<Tensor> = raw.into_iter().map(|mut x| { x[0] += 2.0; Tensor::vector(x) }).collect();
            let mut a = Gallery::new(4);
            let mut b = Gallery::new(4);
            for e in &es {
                a.enroll_embedding("p", OcclusionClass::Face, e, at()).unwrap();
            }
            b.enroll_embeddings("p", OcclusionClass::Face, &es, at()).unwrap();
            let pa = &a.entry("p").unwrap().classes[&OcclusionClass::Face];
            let pb = &b.entry("p").unwrap().classes[&OcclusionClass::Face];
            prop_assert_eq!(pa.count, pb.count);
            for (x, y) in pa.mean.data().iter().zip(pb.mean.data()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn score_in_range(raw in prop::collection::vec(-5.0f64..5.0, 3)) {
            prop_assume!(raw.iter().any(|x| x.abs() > 1e-3));
            let mut g = Gallery::new(3);
            g.enroll_embedding("p", OcclusionClass::Face, &Tensor::vector(vec![1.0, 0.0, 0.0]), at()).unwrap();
            let m = g.identify_embedding(&Tensor::vector(raw), None).unwrap().unwrap();
            prop_assert!((0.0..=100.0).contains(&m.score));
        }
    }
}
