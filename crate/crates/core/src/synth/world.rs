use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Result, SynthError};
use crate::graph::{read_checkpoint, write_checkpoint, ParamStore, Tensor};
use crate::hashing::sha256_file;
use crate::ingest::{Catalog, DatasetDescriptor, Interaction};

pub const WORLD_CHECKPOINT: &str = "world.ckpt";
pub const WORLD_MANIFEST: &str = "world.json";
pub const RAW_RATINGS: &str = "ratings.tsv";
pub const RAW_ITEMS: &str = "items.tsv";

/// Synthetic ratings are the labels themselves.
pub const SYNTH_DESCRIPTOR: DatasetDescriptor = DatasetDescriptor {
    rating_min: 0.0,
    rating_max: 1.0,
    threshold: 0.5,
};

// Stream offsets keep user, item and assignment draws independent.
const ITEM_STREAM: u64 = 1 << 32;
const ASSIGN_STREAM: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub latent_dim: usize,
    /// Spread of the shared item quality on latent coordinate 0.
    pub quality_std: f64,
    /// Spread of the remaining personal-taste coordinates.
    pub taste_std: f64,
    /// Dirichlet concentration of a user's dominant categories.
    pub dominant_alpha: f64,
    pub other_alpha: f64,
    /// Floor applied after rescaling a preference row to max 1.
    pub min_preference: f64,
    /// Probability that an item also carries a second category.
    pub multi_category_rate: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 2000,
            n_categories: 5,
            latent_dim: 8,
            quality_std: 1.0,
            taste_std: 0.6,
            dominant_alpha: 5.0,
            other_alpha: 0.5,
            min_preference: 0.02,
            multi_category_rate: 0.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::BadParameter(m.into()));
        if self.n_users == 0 || self.n_items == 0 || self.n_categories == 0 || self.latent_dim == 0 {
            return bad("all sizes must be at least 1");
        }
        if !(self.quality_std >= 0.0 && self.taste_std >= 0.0) {
            return bad("latent spreads must be non-negative");
        }
        if !(self.dominant_alpha > 0.0 && self.other_alpha > 0.0) {
            return bad("Dirichlet concentrations must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_preference) || !(0.0..=1.0).contains(&self.multi_category_rate) {
            return bad("min_preference and multi_category_rate must lie in [0, 1]");
        }
        Ok(())
    }
}

/// A generated world: the category preference of every user, latent factors
/// behind the category-independent acceptance, and item categories.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthWorld {
    pub config: WorldConfig,
    pub seed: u64,
    /// Row-major `[N, K]`, entries in `[0, 1]`.
    pub pc: Vec<f64>,
    /// Row-major `[N, L]`.
    pub user_latent: Vec<f64>,
    /// Row-major `[M, L]`.
    pub item_latent: Vec<f64>,
    /// Sorted, non-empty category indices per item.
    pub item_categories: Vec<Vec<usize>>,
    /// Row-major `[M, K]` uniform distribution over each item's categories.
    pub item_targets: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn preference_row(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = cfg.n_categories;
    let mut cats: Vec<usize> = (0..k).collect();
    cats.shuffle(rng);
    let n_dominant = rng.random_range(1..=3).min(k);
    let dominant = Gamma::new(cfg.dominant_alpha, 1.0).expect("positive shape");
    let other = Gamma::new(cfg.other_alpha, 1.0).expect("positive shape");
    let mut row = vec![0.0; k];
    for (j, &c) in cats.iter().enumerate() {
        row[c] = if j < n_dominant {
            dominant.sample(rng)
        } else {
            other.sample(rng)
        };
    }
    // Dirichlet normalization followed by max-rescaling is just the rescale.
    let max = row.iter().cloned().fold(0.0, f64::max);
    row.iter()
        .map(|&g| if max > 0.0 { g / max } else { 1.0 })
        .map(|p| p.clamp(cfg.min_preference, 1.0))
        .collect()
}

fn latent_row(cfg: &WorldConfig, rng: &mut ChaCha8Rng, first: Option<f64>) -> Vec<f64> {
    let taste = Normal::new(0.0, cfg.taste_std).expect("finite spread");
    let quality = Normal::new(0.0, cfg.quality_std).expect("finite spread");
    let mut row: Vec<f64> = (0..cfg.latent_dim).map(|_| taste.sample(rng)).collect();
    row[0] = first.unwrap_or_else(|| quality.sample(rng));
    row
}

impl SynthWorld {
    /// Generates a world. Latents are drawn per user and per item from
    /// dedicated streams, so category assignment never influences quality.
    pub fn generate(config: WorldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (n, m, k, l) = (config.n_users, config.n_items, config.n_categories, config.latent_dim);
        let users: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|u| {
                let mut rng = stream_rng(seed, u as u64);
                let pc = preference_row(&config, &mut rng);
                // Every user weighs quality the same way; taste varies.
                (pc, latent_row(&config, &mut rng, Some(1.0)))
            })
            .collect();
        let item_latent: Vec<f64> = (0..m)
            .into_par_iter()
            .flat_map_iter(|i| latent_row(&config, &mut stream_rng(seed, ITEM_STREAM + i as u64), None))
            .collect();

        let mut rng = stream_rng(seed, ASSIGN_STREAM);
        let mut primary: Vec<usize> = (0..m).map(|i| i % k).collect();
        primary.shuffle(&mut rng);
        let item_categories: Vec<Vec<usize>> = primary
            .into_iter()
            .map(|c| {
                let mut cats = vec![c];
                if k > 1 && rng.random::<f64>() < config.multi_category_rate {
                    let other = (c + rng.random_range(1..k)) % k;
                    cats.push(other);
                    cats.sort_unstable();
                }
                cats
            })
            .collect();
        let mut item_targets = vec![0.0; m * k];
        for (i, cats) in item_categories.iter().enumerate() {
            for &c in cats {
                item_targets[i * k + c] = 1.0 / cats.len() as f64;
            }
        }
        let mut pc = Vec::with_capacity(n * k);
        let mut user_latent = Vec::with_capacity(n * l);
        for (p, z) in users {
            pc.extend(p);
            user_latent.extend(z);
        }
        Ok(Self {
            config,
            seed,
            pc,
            user_latent,
            item_latent,
            item_categories,
            item_targets,
        })
    }

    pub fn n_users(&self) -> usize {
        self.config.n_users
    }

    pub fn n_items(&self) -> usize {
        self.config.n_items
    }

    pub fn n_categories(&self) -> usize {
        self.config.n_categories
    }

    pub fn preference(&self, user: usize, category: usize) -> f64 {
        self.pc[user * self.n_categories() + category]
    }

    pub fn item_target(&self, item: usize) -> &[f64] {
        let k = self.n_categories();
        &self.item_targets[item * k..(item + 1) * k]
    }

    /// Item quality, the latent coordinate shared by all users.
    pub fn quality(&self, item: usize) -> f64 {
        self.item_latent[item * self.config.latent_dim]
    }

    /// Category-independent acceptance σ(z_u · z_i).
    pub fn p_perp(&self, user: usize, item: usize) -> f64 {
        let l = self.config.latent_dim;
        let zu = &self.user_latent[user * l..(user + 1) * l];
        let zi = &self.item_latent[item * l..(item + 1) * l];
        sigmoid(zu.iter().zip(zi).map(|(a, b)| a * b).sum())
    }

    /// Category preference of a user for an item's category mixture.
    pub fn p_category(&self, user: usize, item: usize) -> f64 {
        let k = self.n_categories();
        let row = &self.pc[user * k..(user + 1) * k];
        self.item_target(item).iter().zip(row).map(|(t, p)| t * p).sum()
    }

    pub fn label_probability(&self, user: usize, item: usize) -> f64 {
        self.p_category(user, item) * self.p_perp(user, item)
    }

    /// Catalog with ids `u{n}`, `i{n}` and categories `c{k}`, indexed like
    /// the world.
    pub fn catalog(&self) -> Catalog {
        let m = self.n_items();
        Catalog {
            user_ids: (0..self.n_users()).map(|u| format!("u{u}")).collect(),
            item_ids: (0..m).map(|i| format!("i{i}")).collect(),
            category_names: (0..self.n_categories()).map(|c| format!("c{c}")).collect(),
            item_categories: self.item_categories.clone(),
            item_category_weights: vec![None; m],
            ..Catalog::default()
        }
    }
}

/// Draws `n_e` distinct items per user. Exposure weight of item `i` is
/// `(1 - skew) + skew * P^C-mixture(u, i)`, so `skew = 0` is uniform and
/// larger values over-expose the user's preferred categories. Timestamps
/// interleave users: step `s` of user `u` happens at `s * N + u`.
pub fn sample_interactions(world: &SynthWorld, n_e: usize, skew: f64, seed: u64) -> Result<Vec<Interaction>> {
    let (n, m) = (world.n_users(), world.n_items());
    if n_e == 0 || n_e > m {
        return Err(SynthError::BadParameter(format!("exposure {n_e} must lie in 1..={m}")));
    }
    if !(0.0..=1.0).contains(&skew) {
        return Err(SynthError::BadParameter("skew must lie in [0, 1]".into()));
    }
    let mut out: Vec<Interaction> = (0..n)
        .into_par_iter()
        .flat_map_iter(|u| {
            let mut rng = stream_rng(seed, u as u64);
            // Weighted sampling without replacement: keep the n_e largest
            // ln(r) / w keys.
            let mut keys: Vec<(f64, usize)> = (0..m)
                .map(|i| {
                    let w = (1.0 - skew) + skew * world.p_category(u, i);
                    let r: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                    (r.ln() / w, i)
                })
                .collect();
            keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            keys.truncate(n_e);
            // Exposure order is random; otherwise later steps would favor
            // the less preferred categories.
            keys.shuffle(&mut rng);
            keys.into_iter()
                .enumerate()
                .map(|(step, (_, i))| {
                    let y = rng.random::<f64>() < world.label_probability(u, i);
                    Interaction::new(u, i, y as u8, (step * n + u) as i64)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    out.sort_by_key(|x| x.timestamp);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldManifest {
    pub config: WorldConfig,
    pub seed: u64,
    pub item_categories: Vec<Vec<usize>>,
    pub checkpoint_sha256: String,
}

/// Writes the dense matrices as a checkpoint plus a JSON manifest.
pub fn write_world(dir: &Path, world: &SynthWorld) -> Result<WorldManifest> {
    fs::create_dir_all(dir)?;
    let (n, m, k, l) = (world.n_users(), world.n_items(), world.n_categories(), world.config.latent_dim);
    let mut store = ParamStore::new();
    store.add("pc", Tensor::matrix(n, k, world.pc.clone()))?;
    store.add("user_latent", Tensor::matrix(n, l, world.user_latent.clone()))?;
    store.add("item_latent", Tensor::matrix(m, l, world.item_latent.clone()))?;
    store.add("item_targets", Tensor::matrix(m, k, world.item_targets.clone()))?;
    let ckpt = dir.join(WORLD_CHECKPOINT);
    let mut w = BufWriter::new(fs::File::create(&ckpt)?);
    write_checkpoint(&store, &mut w)?;
    w.flush()?;
    drop(w);
    let manifest = WorldManifest {
        config: world.config.clone(),
        seed: world.seed,
        item_categories: world.item_categories.clone(),
        checkpoint_sha256: sha256_file(&ckpt)?,
    };
    fs::write(dir.join(WORLD_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_world(dir: &Path) -> Result<SynthWorld> {
    let manifest: WorldManifest = serde_json::from_str(&fs::read_to_string(dir.join(WORLD_MANIFEST))?)?;
    manifest.config.validate()?;
    let ckpt = dir.join(WORLD_CHECKPOINT);
    let found = sha256_file(&ckpt)?;
    if found != manifest.checkpoint_sha256 {
        return Err(SynthError::Format(format!(
            "checkpoint hash {found} does not match manifest {}",
            manifest.checkpoint_sha256
        )));
    }
    let store = read_checkpoint(fs::File::open(&ckpt)?)?;
    let c = manifest.config.clone();
    let take = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
        let p = store.by_name(name)?;
        if p.shape != [rows, cols] {
            return Err(SynthError::Format(format!("{name} has shape {:?}, expected [{rows}, {cols}]", p.shape)));
        }
        Ok(p.value.clone())
    };
    let world = SynthWorld {
        pc: take("pc", c.n_users, c.n_categories)?,
        user_latent: take("user_latent", c.n_users, c.latent_dim)?,
        item_latent: take("item_latent", c.n_items, c.latent_dim)?,
        item_targets: take("item_targets", c.n_items, c.n_categories)?,
        item_categories: manifest.item_categories,
        config: manifest.config,
        seed: manifest.seed,
    };
    if world.item_categories.len() != c.n_items
        || world.item_categories.iter().any(|v| v.is_empty() || v.iter().any(|&k| k >= c.n_categories))
    {
        return Err(SynthError::Format("item categories do not match the world sizes".into()));
    }
    Ok(world)
}

/// Emits interactions and item categories in the delimited formats the
/// ingest parsers read: `u{n}\ti{n}\tlabel\ttimestamp` and `i{n}\tc{k}|...`.
/// Parse the ratings with [`SYNTH_DESCRIPTOR`].
pub fn write_world_as_raw(dir: &Path, world: &SynthWorld, interactions: &[Interaction]) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let ratings = dir.join(RAW_RATINGS);
    let mut w = BufWriter::new(fs::File::create(&ratings)?);
    for x in interactions {
        writeln!(w, "u{}\ti{}\t{}\t{}", x.user, x.item, x.label, x.timestamp)?;
    }
    w.flush()?;
    let items = dir.join(RAW_ITEMS);
    let mut w = BufWriter::new(fs::File::create(&items)?);
    for (i, cats) in world.item_categories.iter().enumerate() {
        let names: Vec<String> = cats.iter().map(|c| format!("c{c}")).collect();
        writeln!(w, "i{i}\t{}", names.join("|"))?;
    }
    w.flush()?;
    Ok((ratings, items))
}
