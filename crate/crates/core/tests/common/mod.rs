#![allow(dead_code)]

use std::path::PathBuf;

use forensic_lineup::embed::{Embedding, EmbeddingArchive};
use forensic_lineup::manifest::{DatasetManifest, Glasses, ImageRecord, Lighting, Role, Source};
use forensic_lineup::rng::{Gaussian, SplitMix64};

pub fn record(image_id: &str, identity_id: &str, role: Role) -> ImageRecord {
    ImageRecord {
        image_id: image_id.into(),
        identity_id: identity_id.into(),
        path: PathBuf::from(format!("images/{image_id}.png")),
        role,
        yaw: 0.0,
        pitch: 0.0,
        roll: 0.0,
        glasses: Glasses::None,
        mask: false,
        headwear: false,
        lighting: Lighting::Normal,
        race: "other".into(),
        gender: "female".into(),
        source: Source::Synthetic,
        bbox: None,
    }
}

pub fn random_unit(g: &mut Gaussian, dim: usize) -> Embedding {
    Embedding::normalized(g.take(dim).collect()).unwrap()
}

/// Manifest with one mugshot and `probes_per_identity` probes per identity,
/// plus an archive of seeded random embeddings for every record. With
/// `coarse`, vectors are snapped to a few directions so that similarity ties
/// occur.
pub fn random_world(
    n_identities: usize,
    probes_per_identity: usize,
    dim: usize,
    seed: u64,
    coarse: bool,
) -> (DatasetManifest, EmbeddingArchive) {
    let mut records = Vec::new();
    for i in 0..n_identities {
        let identity = format!("p{i:02}");
        records.push(record(&format!("{identity}_m"), &identity, Role::Mugshot));
        for j in 0..probes_per_identity {
            records.push(record(&format!("{identity}_{j}"), &identity, Role::Unconstrained));
        }
    }
    let mut g = Gaussian::new(seed);
    let mut pick = SplitMix64::new(seed ^ 0xA5A5);
    let palette: Vec<Embedding> = (0..3).map(|_| random_unit(&mut g, dim)).collect();
    let mut archive = EmbeddingArchive::new("random", dim);
    for r in &records {
        let e = if coarse {
            palette[pick.below(palette.len() as u64) as usize].clone()
        } else {
            random_unit(&mut g, dim)
        };
        archive.insert(r.image_id.clone(), &e).unwrap();
    }
    let m = DatasetManifest::new(format!("random-{seed}"), records, PathBuf::from(".")).unwrap();
    (m, archive)
}
