//! Deterministic synthetic feature-map datasets.
//!
//! Every identity owns six band prototypes. Some prototypes are swapped for
//! entries of a per-band shared pool, so distinct identities can agree on
//! individual parts. Images tile the prototypes over their bands and add
//! Gaussian noise, random clutter rows and whole-band occlusions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::binary::write_file;
use super::feature::encode_feature;
use super::manifest::{ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::head::FeatureMap;

const BANDS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_ids: usize,
    /// Trailing identities held out for query/gallery.
    pub eval_ids: usize,
    pub imgs_per_id: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub noise_sigma: f64,
    pub shared_attribute_prob: f64,
    /// Shared prototypes per band.
    pub shared_pool_size: usize,
    pub clutter_row_prob: f64,
    pub occlusion_band_prob: f64,
    pub n_cameras: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Default geometry and corruption rates; a third of the identities are
    /// held out for evaluation.
    pub fn new(n_ids: usize, imgs_per_id: usize, seed: u64) -> Self {
        SynthSpec {
            n_ids,
            eval_ids: n_ids / 3,
            imgs_per_id,
            height: 12,
            width: 4,
            channels: 64,
            noise_sigma: 0.25,
            shared_attribute_prob: 0.3,
            shared_pool_size: 4,
            clutter_row_prob: 0.15,
            occlusion_band_prob: 0.1,
            n_cameras: 2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_ids == 0 || self.imgs_per_id == 0 {
            return bad("n_ids and imgs_per_id must be positive".into());
        }
        if self.eval_ids > self.n_ids {
            return bad(format!("eval_ids {} exceeds n_ids {}", self.eval_ids, self.n_ids));
        }
        if self.height == 0 || self.height % BANDS != 0 {
            return bad(format!("height {} is not a positive multiple of {BANDS}", self.height));
        }
        if self.width == 0 || self.channels == 0 {
            return bad("width and channels must be positive".into());
        }
        for (name, p) in [
            ("shared_attribute_prob", self.shared_attribute_prob),
            ("clutter_row_prob", self.clutter_row_prob),
            ("occlusion_band_prob", self.occlusion_band_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} is outside [0, 1]"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be non-negative", self.noise_sigma));
        }
        if self.shared_pool_size == 0 && self.shared_attribute_prob > 0.0 {
            return bad("shared_pool_size must be positive when sharing is enabled".into());
        }
        if self.n_cameras == 0 {
            return bad("n_cameras must be positive".into());
        }
        if self.eval_ids > 0 && (self.n_cameras < 2 || self.imgs_per_id < 2) {
            return bad("held-out identities need at least 2 cameras and 2 images for cross-camera matches".into());
        }
        Ok(())
    }

    fn image_count(&self, person: usize) -> usize {
        if person < self.n_ids - self.eval_ids {
            self.imgs_per_id.div_ceil(2)
        } else {
            self.imgs_per_id
        }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Writes `manifest.jsonl`, `spec.json` and `features/*.ridf` under `out`.
/// Returns the manifest path.
pub fn synth_generate(spec: &SynthSpec, out: &Path, overwrite: bool) -> Result<PathBuf> {
    spec.validate()?;
    let manifest_path = out.join("manifest.jsonl");
    let features = out.join("features");
    if out.exists() {
        let occupied = std::fs::read_dir(out)
            .map_err(|e| Error::io(out, e))?
            .next()
            .is_some();
        if occupied && !overwrite {
            return Err(Error::Data(format!("{} exists and is not empty", out.display())));
        }
        if features.exists() {
            std::fs::remove_dir_all(&features).map_err(|e| Error::io(&features, e))?;
        }
    }

    let (c, w) = (spec.channels, spec.width);
    let rows_per_band = spec.height / BANDS;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool: Vec<Vec<Vec<f32>>> = (0..BANDS)
        .map(|_| (0..spec.shared_pool_size).map(|_| normal_vec(&mut rng, c)).collect())
        .collect();

    let mut manifest = String::new();
    let first_eval = spec.n_ids - spec.eval_ids;
    for person in 0..spec.n_ids {
        let protos: Vec<Vec<f32>> = (0..BANDS)
            .map(|b| {
                let own = normal_vec(&mut rng, c);
                if rng.gen_bool(spec.shared_attribute_prob) {
                    pool[b][rng.gen_range(0..spec.shared_pool_size)].clone()
                } else {
                    own
                }
            })
            .collect();
        for m in 0..spec.image_count(person) {
            let mut values = Vec::with_capacity(spec.height * w * c);
            for row in 0..spec.height {
                let base = &protos[row / rows_per_band];
                let clutter = rng.gen_bool(spec.clutter_row_prob).then(|| normal_vec(&mut rng, c));
                for _ in 0..w {
                    let src = clutter.as_ref().unwrap_or(base);
                    for &v in src {
                        let noise: f32 = StandardNormal.sample(&mut rng);
                        values.push(v + spec.noise_sigma as f32 * noise);
                    }
                }
            }
            let band_len = rows_per_band * w * c;
            for band in values.chunks_exact_mut(band_len) {
                if rng.gen_bool(spec.occlusion_band_prob) {
                    band.fill(0.0);
                }
            }
            let camera = m % spec.n_cameras;
            let split = match (person >= first_eval, m) {
                (false, _) => Split::Train,
                (true, 0) => Split::Query,
                (true, _) => Split::Gallery,
            };
            let id = format!("p{person:04}_c{camera}_{m:03}");
            let rel = format!("features/{id}.ridf");
            let map = FeatureMap::new(spec.height, w, c, values)?;
            write_file(&out.join(&rel), &encode_feature(&map)?)?;
            let entry = ManifestEntry {
                id,
                feature_path: rel,
                person_id: person as i64,
                camera_id: camera as i64,
                split,
            };
            writeln!(manifest, "{}", serde_json::to_string(&entry)?).expect("write to String");
        }
    }
    write_file(&manifest_path, manifest.as_bytes())?;
    let mut spec_json = serde_json::to_vec_pretty(spec)?;
    spec_json.push(b'\n');
    write_file(&out.join("spec.json"), &spec_json)?;
    Ok(manifest_path)
}
