//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

mod common;

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use vadagent::eval::{average_precision, roc_auc, smooth, DEFAULT_SMOOTH_WINDOW};
use vadagent::gateway::{Matcher, ScriptRule};
use vadagent::knowledge::{EmbedError, KnowledgeBase, KnowledgeEntry};
use vadagent::reasoning::iter_clips;
use vadagent::trace::{TIMELINE_FILE, TRACE_FILE};
use vadagent::video::write_synthetic_video;
use vadagent::{
    Embedder, Engine, FrameRef, FrameStore, KnowledgeIndex, LongCoM, MemoryUnit, Mode,
    ReasoningResult, ReflectionResult, Role, RunConfig, ScriptedBackend, ShortCoM, Status,
    UserQuery,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("golden trace is byte-identical and fast", golden_trace),
        ("metric oracles", metric_oracles),
        ("retrieval oracle", retrieval_oracle),
        ("reflection budget", reflection_budget),
        ("memory invariants", memory_invariants),
        ("smoothing oracle", smoothing_oracle),
        ("online causality", online_causality),
        ("defaults conformance", defaults_conformance),
        ("ablation changes the outcome", ablation_analog),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  criterion {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

// 1

fn golden_trace() -> Outcome {
    let a = run_golden(golden_config());
    let b = run_golden(golden_config());
    ensure!(a.trace == b.trace, "trace differs between two runs");
    ensure!(
        a.timeline == b.timeline,
        "timeline differs between two runs"
    );
    ensure!(
        a.trace == expected(TRACE_FILE),
        "trace differs from the committed golden file"
    );
    ensure!(
        a.timeline == expected(TIMELINE_FILE),
        "timeline differs from the committed golden file"
    );
    let slowest = a.elapsed.max(b.elapsed);
    ensure!(slowest < Duration::from_secs(5), "run took {slowest:?}");
    Ok(format!(
        "{} trace bytes, {} timeline bytes, slowest run {:.0} ms",
        a.trace.len(),
        a.timeline.len(),
        slowest.as_secs_f64() * 1e3
    ))
}

// 2

fn pairwise_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Repeatedly takes the highest remaining score, earliest index first.
fn rank_walk_ap(labels: &[u8], scores: &[f64]) -> f64 {
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
    let (mut rank, mut hits, mut total) = (0.0, 0.0, 0.0);
    while !remaining.is_empty() {
        let mut best = 0;
        for (slot, &i) in remaining.iter().enumerate() {
            if scores[i] > scores[remaining[best]] {
                best = slot;
            }
        }
        let i = remaining.remove(best);
        rank += 1.0;
        if labels[i] == 1 {
            hits += 1.0;
            total += hits / rank;
        }
    }
    total / positives
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut all_ties, mut single_pos) = (0, 0);
    for case in 0..200 {
        let n = rng.gen_range(2..=50);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        let scores: Vec<f64> = match case % 10 {
            0 => vec![0.5; n],
            _ if case % 3 == 0 => (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect(),
            _ => (0..n).map(|_| rng.gen::<f64>()).collect(),
        };
        if case % 10 == 1 {
            labels.iter_mut().for_each(|l| *l = 0);
            labels[rng.gen_range(0..n)] = 1;
        }
        labels[0] = if labels.iter().all(|&l| l == 1) {
            0
        } else {
            labels[0]
        };
        if labels.iter().all(|&l| l == 0) {
            labels[n - 1] = 1;
        }
        all_ties += usize::from(scores.iter().all(|&s| s == scores[0]));
        single_pos += usize::from(labels.iter().filter(|&&l| l == 1).count() == 1);

        let auc = roc_auc(&labels, &scores).map_err(|e| e.to_string())?;
        let ap = average_precision(&labels, &scores).map_err(|e| e.to_string())?;
        let (auc_o, ap_o) = (
            pairwise_auc(&labels, &scores),
            rank_walk_ap(&labels, &scores),
        );
        ensure!(
            (auc - auc_o).abs() <= 1e-12,
            "case {case}: auc {auc} vs oracle {auc_o}"
        );
        ensure!(
            (ap - ap_o).abs() <= 1e-12,
            "case {case}: ap {ap} vs oracle {ap_o}"
        );
    }
    ensure!(all_ties > 0 && single_pos > 0, "edge cases not generated");
    Ok(format!(
        "200 instances ({all_ties} all-ties, {single_pos} single-positive) within 1e-12"
    ))
}

// 3

/// Maps known texts to fixed vectors.
struct TableEmbedder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl Embedder for TableEmbedder {
    fn id(&self) -> String {
        "table".into()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let v = self.table.get(text).ok_or(EmbedError::EmptyText)?;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.iter().map(|x| x / norm).collect())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Random nonzero rows; about one in five repeats an earlier row exactly.
fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Vec<Vec<f64>>, usize) {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut copies = 0;
    for _ in 0..n {
        if !rows.is_empty() && rng.gen_bool(0.2) {
            let src = rng.gen_range(0..rows.len());
            rows.push(rows[src].clone());
            copies += 1;
        } else {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if v.iter().all(|&x| x == 0.0) {
                v[0] = 1.0;
            }
            rows.push(v);
        }
    }
    (rows, copies)
}

/// Indices of the `k` rows most similar to `q`, earliest first on ties.
fn brute_top_k(rows: &[Vec<f64>], q: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i, cosine(q, r)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn retrieval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut tie_cases, mut experience_checks) = (0, 0);
    for case in 0..100 {
        let n = rng.gen_range(1..=500);
        let dim = rng.gen_range(1..=64);
        let (rows, copies) = random_rows(&mut rng, n, dim);
        tie_cases += usize::from(copies > 0);
        let query: Vec<f64> = if rng.gen_bool(0.3) {
            rows[rng.gen_range(0..n)].clone()
        } else {
            (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };

        // Knowledge retrieval.
        let entries: Vec<KnowledgeEntry> = (0..n)
            .map(|i| KnowledgeEntry {
                event_type: "event".into(),
                anomaly_rule: format!("rule {i}"),
                application_scenes: vec![],
            })
            .collect();
        let mut table: HashMap<String, Vec<f64>> = entries
            .iter()
            .zip(&rows)
            .map(|(e, r)| (e.index_text(), r.clone()))
            .collect();
        table.insert("query".into(), query.clone());
        let embedder = Arc::new(TableEmbedder { dim, table });
        let index = KnowledgeIndex::build(KnowledgeBase::from_entries(entries), embedder.clone())
            .map_err(|e| e.to_string())?;
        let k = rng.gen_range(1..=n + 3);
        let got = index
            .retrieve_top_k("query", k)
            .map_err(|e| e.to_string())?;
        let want = brute_top_k(&rows, &query, k);
        ensure!(
            got.len() == want.len(),
            "case {case}: {} hits, oracle {}",
            got.len(),
            want.len()
        );
        for (pos, (hit, (i, sim))) in got.rules.iter().zip(&want).enumerate() {
            ensure!(
                hit.entry.anomaly_rule == format!("rule {i}"),
                "case {case}: rank {pos} is `{}`, oracle says rule {i}",
                hit.entry.anomaly_rule
            );
            ensure!(
                (hit.similarity - sim).abs() <= 1e-12,
                "case {case}: similarity {} vs {sim}",
                hit.similarity
            );
        }

        // Experience retrieval over reflected units only.
        let reflected: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
        let mut table: HashMap<String, Vec<f64>> = (0..n)
            .map(|i| (format!("reason {i}"), rows[i].clone()))
            .collect();
        table.insert("query".into(), query.clone());
        let mut long = LongCoM::new(Arc::new(TableEmbedder { dim, table }));
        for (t, &has_reflection) in reflected.iter().enumerate() {
            let reasoning = ReasoningResult::new(Status::Insufficient, 0.5, format!("reason {t}"));
            let reflection =
                has_reflection.then(|| ReflectionResult::empty(&format!("reason {t}")));
            long.append_long(MemoryUnit::new(t, reasoning, reflection, None).unwrap())
                .map_err(|e| e.to_string())?;
        }
        let candidates: Vec<Vec<f64>> = (0..n)
            .filter(|&i| reflected[i])
            .map(|i| rows[i].clone())
            .collect();
        let positions: Vec<usize> = (0..n).filter(|&i| reflected[i]).collect();
        let got = long.retrieve_experience("query").map(MemoryUnit::t);
        let want = brute_top_k(&candidates, &query, 1)
            .first()
            .map(|&(p, _)| positions[p]);
        ensure!(
            got == want,
            "case {case}: experience from clip {got:?}, oracle {want:?}"
        );
        experience_checks += 1;
    }
    Ok(format!(
        "100 corpora ({tie_cases} with exact ties), {experience_checks} experience lookups agree with brute force"
    ))
}

// 4

const ENV: &str = r#"{"scene_overview":"a parking lot","potential_anomalies":["fire"],"weather_condition":"clear","video_quality":"dark"}"#;
const PLAN: &str = r#"{"preprocessing":[],"potential_anomalies":["fire"],"heuristic_prompts":{"fire":["look for flames"]}}"#;

fn clip_index(text: &str) -> Option<usize> {
    let rest = text.split("Clip index: ").nth(1)?;
    rest.split(|c: char| !c.is_ascii_digit())
        .next()?
        .parse()
        .ok()
}

fn reflection_budget() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let video =
        write_synthetic_video(&tmp.path().join("v"), "v", 25, 1.0, (32, 24), 0..25).unwrap();
    let backend = Arc::new(ScriptedBackend::new(
        vec![
            ScriptRule::new(Matcher::Any, Some(Role::Perception), ENV),
            ScriptRule::new(Matcher::Any, Some(Role::Planning), PLAN),
            ScriptRule::new(
                Matcher::Any,
                Some(Role::Reflection),
                r#"{"insufficient_reason":"too dark","tools_to_use":[{"name":"brighten","params":{}}]}"#,
            ),
            ScriptRule::new(
                Matcher::Any,
                Some(Role::Reasoning),
                r#"{"status":"Insufficient","score":0.3,"reason":"still too dark"}"#,
            ),
        ],
        "",
    ));
    let config = RunConfig {
        r: 3,
        ..RunConfig::default()
    };
    let r = config.r;
    let engine =
        Engine::with_backend(config, backend.clone(), Arc::new(FrameStore::new())).unwrap();
    let run = engine
        .run_video(
            &video,
            &UserQuery::parse("Detect anomalies: fire"),
            None,
            None,
        )
        .map_err(|e| e.to_string())?;

    ensure!(
        run.records.len() == 5,
        "expected 5 clips, got {}",
        run.records.len()
    );
    for rec in &run.records {
        ensure!(
            rec.rounds_used == r,
            "clip {} used {} rounds",
            rec.t,
            rec.rounds_used
        );
        ensure!(rec.score == 0.5, "clip {} final score {}", rec.t, rec.score);
        ensure!(
            rec.status == Status::Insufficient,
            "clip {} final status {}",
            rec.t,
            rec.status
        );
    }
    let log = backend.call_log();
    let mut per_clip = vec![0usize; run.records.len()];
    for req in log
        .iter()
        .filter(|q| matches!(q.role, Role::Reasoning | Role::Reflection))
    {
        let t = clip_index(&req.user_text).ok_or("request without a clip index")?;
        per_clip[t] += 1;
    }
    ensure!(
        per_clip.iter().all(|&c| c == 1 + 2 * r),
        "calls per clip {per_clip:?}, expected {}",
        1 + 2 * r
    );
    ensure!(
        log.len() == 2 + 5 * (1 + 2 * r),
        "total calls {}",
        log.len()
    );
    Ok(format!(
        "5 clips x {} calls, rounds_used={r}, final score 0.5",
        1 + 2 * r
    ))
}

// 5

fn random_unit(
    rng: &mut ChaCha8Rng,
    t: usize,
) -> (Option<ReflectionResult>, Option<ReasoningResult>) {
    let reflection = rng
        .gen_bool(0.5)
        .then(|| ReflectionResult::empty(&format!("reason {}", rng.gen_range(0..20))));
    let refined = rng
        .gen_bool(0.5)
        .then(|| ReasoningResult::new(Status::Abnormal, rng.gen(), format!("refined {t}")));
    (reflection, refined)
}

fn memory_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let embedder: Arc<dyn Embedder> = Arc::new(vadagent::HashEmbedder::new(64, 0));
    let empty = LongCoM::new(embedder.clone());
    ensure!(
        empty.retrieve_experience("anything").is_none(),
        "empty LongCoM returned an experience"
    );

    let (mut pushes, mut rejected_t, mut rejected_refined) = (0, 0, 0);
    while pushes < 1000 {
        let l = rng.gen_range(0..=8);
        let mut short = ShortCoM::new(l);
        let mut model: VecDeque<(String, Vec<FrameRef>)> = VecDeque::new();
        let mut reflections: VecDeque<ReflectionResult> = VecDeque::new();
        let mut long = LongCoM::new(embedder.clone());
        let mut snapshot: Vec<MemoryUnit> = Vec::new();

        for _ in 0..rng.gen_range(1..=120) {
            pushes += 1;
            let t = long.len();
            let text = format!("t={t} step");
            let refs: Vec<FrameRef> = (0..rng.gen_range(1..=5))
                .map(|i| FrameRef::source("v", t * 5 + i))
                .collect();
            short.push_step(text.clone(), refs.clone());
            if l > 0 {
                model.push_back((text, refs));
                if model.len() > l {
                    model.pop_front();
                }
            }
            if rng.gen_bool(0.3) {
                let r = ReflectionResult::empty(&format!("reflection {pushes}"));
                short.push_reflection(r.clone());
                if l > 0 {
                    reflections.push_back(r);
                    if reflections.len() > l {
                        reflections.pop_front();
                    }
                }
            }

            let texts: Vec<&str> = short.text_window().collect();
            let visuals: Vec<&[FrameRef]> = short.visual_window().collect();
            ensure!(texts.len() <= l && visuals.len() <= l, "window over l={l}");
            ensure!(
                texts.len() == visuals.len(),
                "text and visual windows differ in length"
            );
            ensure!(
                texts.len() == model.len(),
                "window holds {} steps, expected {}",
                texts.len(),
                model.len()
            );
            for ((text, refs), (mt, mr)) in texts.iter().zip(&visuals).zip(&model) {
                ensure!(
                    text == mt && *refs == mr.as_slice(),
                    "windows out of step with the push order"
                );
            }
            let hist: Vec<&ReflectionResult> = short.reflection_history().collect();
            ensure!(
                hist.len() <= l && hist.iter().copied().eq(reflections.iter()),
                "reflection history wrong"
            );

            // Long memory: dense, append-only, refined implies reflection.
            let (reflection, refined) = random_unit(&mut rng, t);
            let reasoning = ReasoningResult::new(Status::Insufficient, 0.5, format!("reason {t}"));
            match MemoryUnit::new(t, reasoning.clone(), reflection.clone(), refined.clone()) {
                Ok(unit) => {
                    if rng.gen_bool(0.1) {
                        let wrong = MemoryUnit::new(
                            t + 1 + rng.gen_range(0..3),
                            reasoning,
                            reflection,
                            refined,
                        )
                        .unwrap();
                        ensure!(
                            long.append_long(wrong).is_err(),
                            "non-dense timestep accepted"
                        );
                        rejected_t += 1;
                    }
                    long.append_long(unit.clone()).map_err(|e| e.to_string())?;
                    snapshot.push(unit);
                }
                Err(_) => {
                    ensure!(
                        refined.is_some() && reflection.is_none(),
                        "valid unit rejected"
                    );
                    rejected_refined += 1;
                    long.append_long(MemoryUnit::new(t, reasoning, reflection, None).unwrap())
                        .map_err(|e| e.to_string())?;
                    snapshot.push(long.units()[t].clone());
                }
            }
            ensure!(
                long.units() == snapshot.as_slice(),
                "LongCoM history changed"
            );
            ensure!(
                long.units().iter().enumerate().all(|(i, u)| u.t() == i),
                "LongCoM not dense"
            );
            ensure!(
                long.units()
                    .iter()
                    .all(|u| u.refined().is_none() || u.reflection().is_some()),
                "refined without reflection"
            );
        }
    }
    let bad = r#"{"t":0,"reasoning":{"status":"Normal","score":0.1,"reason":"x"},"refined":{"status":"Normal","score":0.1,"reason":"y"}}"#;
    ensure!(
        serde_json::from_str::<MemoryUnit>(bad).is_err(),
        "deserialized refined without reflection"
    );
    Ok(format!(
        "{pushes} pushes; {rejected_t} non-dense appends and {rejected_refined} refined-only units rejected"
    ))
}

// 6

fn window_mean(xs: &[f64], i: usize, w: usize) -> f64 {
    let start = i as i64 - ((w as i64 - 1) / 2);
    let (mut sum, mut count) = (0.0, 0.0);
    for j in start..start + w as i64 {
        if j >= 0 && (j as usize) < xs.len() {
            sum += xs[j as usize];
            count += 1.0;
        }
    }
    sum / count
}

fn smoothing_oracle() -> Outcome {
    ensure!(
        RunConfig::default().smooth_window == 10,
        "default smoothing window is not 10"
    );
    ensure!(
        DEFAULT_SMOOTH_WINDOW == 10,
        "DEFAULT_SMOOTH_WINDOW is not 10"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..100 {
        let n = rng.gen_range(1..=300);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        for w in [DEFAULT_SMOOTH_WINDOW, rng.gen_range(1..=40)] {
            let got = smooth(&xs, w);
            ensure!(got.len() == n, "case {case}: length changed");
            for (i, g) in got.iter().enumerate() {
                let want = window_mean(&xs, i, w);
                ensure!(
                    (g - want).abs() <= 1e-12,
                    "case {case}, w={w}, i={i}: {g} vs {want}"
                );
            }
        }
    }
    let example = smooth(&[0.0, 1.0, 0.0], 3);
    ensure!(
        example == [0.5, 1.0 / 3.0, 0.5],
        "[0,1,0] with window 3 gave {example:?}"
    );
    Ok("100 sequences at window 10 and a random window, within 1e-12".into())
}

// 7

fn online_causality() -> Outcome {
    let mut checked = 0;
    for reflection in [true, false] {
        let mut config = golden_config();
        config.mode = Mode::Online;
        config.ablation.reflection = reflection;
        let g = run_golden(config);
        let clips = iter_clips(GOLDEN_FRAMES, 1.0, 1.0, 5);
        let mut current = 0;
        for (n, req) in g.backend.call_log().iter().enumerate() {
            if matches!(req.role, Role::Reasoning | Role::Reflection) {
                let t = clip_index(&req.user_text).ok_or("request without a clip index")?;
                ensure!(t >= current, "request {n} went back to clip {t}");
                current = t;
            }
            let limit = clips[current].last_frame();
            for frame in &req.image_refs {
                ensure!(
                    frame.index() <= limit,
                    "request {n} ({}) attached frame {} while on clip {current} (last frame {limit})",
                    req.role.as_str(),
                    frame.index()
                );
            }
            if let Some(line) = req
                .user_text
                .lines()
                .find(|l| l.starts_with("Frames in this clip:"))
            {
                let max = line
                    .trim_start_matches("Frames in this clip:")
                    .split(',')
                    .filter_map(|x| x.trim().parse::<usize>().ok())
                    .max();
                ensure!(
                    max.is_none_or(|m| m <= limit),
                    "request {n} names frame {max:?} past {limit}"
                );
            }
            checked += 1;
        }
        let perception = g
            .backend
            .call_log()
            .into_iter()
            .find(|q| q.role == Role::Perception)
            .unwrap();
        ensure!(
            perception.image_refs.len() == 5,
            "online perception saw {} frames",
            perception.image_refs.len()
        );
    }
    Ok(format!(
        "{checked} requests across 2 online runs stay within the current clip"
    ))
}

// 8

fn defaults_conformance() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("empty.toml");
    std::fs::write(&path, "").unwrap();
    let loaded = RunConfig::load(&path).map_err(|e| e.to_string())?;
    ensure!(
        loaded == RunConfig::default(),
        "an empty config file does not give the defaults"
    );
    let c = &loaded;
    let got = (
        c.m_offline,
        c.m_online,
        c.s,
        c.h,
        c.k,
        c.r,
        c.l,
        c.smooth_window,
    );
    ensure!(got == (300, 10, 5, 20, 5, 3, 5, 10), "defaults are {got:?}");
    ensure!(
        c.default_insufficient_score == 0.5,
        "default score {}",
        c.default_insufficient_score
    );
    ensure!(
        c.mode == Mode::Offline && c.sample_fps == 1.0,
        "mode or sampling rate differ"
    );
    Ok("M=300/10, s=5, H=20, k=5, r=3, l=5, window=10, default score 0.5".into())
}

// 9

fn ablation_analog() -> Outcome {
    let full = run_golden(golden_config());
    let mut config = golden_config();
    config.ablation.reflection = false;
    let ablated = run_golden(config);
    let (on, off) = (
        &full.run.timeline.per_clip[3],
        &ablated.run.timeline.per_clip[3],
    );
    ensure!(
        on.score == 0.9 && on.status == Status::Abnormal,
        "with reflection clip 3 is {} {}",
        on.status,
        on.score
    );
    ensure!(
        off.score == 0.5 && off.status == Status::Insufficient,
        "without reflection clip 3 is {} {}",
        off.status,
        off.score
    );
    ensure!(!off.reflected, "clip 3 reflected with reflection disabled");
    Ok(format!(
        "clip 3 score {:.1} with reflection, {:.1} without",
        on.score, off.score
    ))
}
