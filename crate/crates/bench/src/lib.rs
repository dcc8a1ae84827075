//! Seeded inputs shared by the benchmarks.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vadagent::knowledge::{KnowledgeBase, KnowledgeEntry};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Frame-level labels and scores with roughly one frame in ten anomalous.
pub fn scored_frames(n: usize, seed: u64) -> (Vec<u8>, Vec<f64>) {
    let mut r = rng(seed);
    let labels: Vec<u8> = (0..n).map(|_| u8::from(r.gen_bool(0.1))).collect();
    let scores = labels
        .iter()
        .map(|&l| (r.gen::<f64>() * 0.7 + 0.3 * f64::from(l)).min(1.0))
        .collect();
    (labels, scores)
}

/// A knowledge base with `per_type` entries for each of `types` categories.
pub fn knowledge_base(types: usize, per_type: usize, seed: u64) -> KnowledgeBase {
    let mut r = rng(seed);
    let words = [
        "person", "car", "smoke", "flames", "crowd", "running", "falling", "door", "street",
        "night",
    ];
    let entries = (0..types)
        .flat_map(|t| (0..per_type).map(move |i| (t, i)))
        .map(|(t, i)| {
            let rule: Vec<&str> = (0..8).map(|_| words[r.gen_range(0..words.len())]).collect();
            KnowledgeEntry {
                event_type: format!("type{t}"),
                anomaly_rule: format!("{} ({i})", rule.join(" ")),
                application_scenes: vec![words[r.gen_range(0..words.len())].to_string()],
            }
        })
        .collect();
    KnowledgeBase::from_entries(entries)
}

/// Noisy textured frame.
pub fn frame(width: u32, height: u32, seed: u64) -> RgbImage {
    let mut r = rng(seed);
    RgbImage::from_fn(width, height, |x, y| {
        let base = ((x * 7 + y * 13) % 128) as i32 + 40;
        let n = r.gen_range(-20..=20);
        let v = (base + n).clamp(0, 255) as u8;
        Rgb([v, v / 2 + 40, 255 - v])
    })
}
