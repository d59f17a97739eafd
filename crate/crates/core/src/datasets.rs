//! Labeled-case corpus: manifest format, deterministic stratified split,
//! and a synthetic generator.
//!
//! A case is one MIR method with a flagged line. `label = true` means the
//! case is actually secure, so a report on it is a false positive; that
//! matches the model's output semantics and avoids double negation.
//!
//! The generator emits five families. Three pair an insecure constant with
//! a secure source (weak cipher algorithm, predictable PRNG seed, hard-coded
//! key) in straight-line or loop-bearing shape. Two are deliberately
//! structural: `dead-store` cases contain both a secure and an insecure
//! constant and only the kill order differs, and `guard-flow` cases differ
//! only in whether the branch target lands on the fix or skips it. For both,
//! token counts alone cannot separate the labels; the data edges around the
//! violation node can.

use crate::mir::{parse_program, validate_program};
use crate::reports::ViolationReport;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed manifest record: {message}")]
    MalformedManifest {
        path: String,
        line: usize,
        message: String,
    },
    #[error("case `{case_id}`: source file {path} cannot be read")]
    DanglingSource { case_id: String, path: String },
    #[error("case `{case_id}`: {message}")]
    InvalidCase { case_id: String, message: String },
    #[error("split ratio {ratio} must lie strictly between 0 and 1")]
    BadRatio { ratio: f64 },
    #[error("cannot split an empty case list")]
    EmptyCases,
    #[error("invalid generator config: {message}")]
    BadGenConfig { message: String },
}

/// One labeled benchmark case.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub case_id: String,
    pub mir_source: String,
    pub method_name: String,
    pub violation_line: u32,
    /// `true` = the case is secure; a report on it is a false positive.
    pub label: bool,
    pub family: String,
}

/// Stratified split with any per-class warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: Vec<Case>,
    pub test: Vec<Case>,
    pub warnings: Vec<String>,
}

/// Synthetic corpus shape: case count, false-positive fraction, seed, and
/// family mix weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_cases: usize,
    pub fp_fraction: f64,
    pub seed: u64,
    pub family_weights: Vec<(String, f64)>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_cases: 431,
            fp_fraction: 0.25,
            seed: 1,
            family_weights: default_family_weights(),
        }
    }
}

pub fn default_family_weights() -> Vec<(String, f64)> {
    vec![
        ("weak-algorithm".to_string(), 3.0),
        ("predictable-seed".to_string(), 2.0),
        ("constant-key".to_string(), 2.0),
        ("guard-flow".to_string(), 2.0),
        ("dead-store".to_string(), 1.0),
    ]
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    case_id: String,
    source: String,
    method: String,
    violation_line: u32,
    label: String,
    family: String,
}

/// Parses and validates a case: the MIR must be clean, the method must
/// exist, and the violation line must host one of its statements.
pub fn validate_case(case: &Case) -> Result<(), DataError> {
    let program = parse_program(&case.mir_source, &case.case_id).map_err(|e| {
        DataError::InvalidCase {
            case_id: case.case_id.clone(),
            message: e.to_string(),
        }
    })?;
    let diags = validate_program(&program);
    if !diags.is_empty() {
        return Err(DataError::InvalidCase {
            case_id: case.case_id.clone(),
            message: diags[0].to_string(),
        });
    }
    let method = program
        .method(&case.method_name)
        .ok_or_else(|| DataError::InvalidCase {
            case_id: case.case_id.clone(),
            message: format!("method `{}` not found", case.method_name),
        })?;
    if method.statement_at_line(case.violation_line).is_none() {
        return Err(DataError::InvalidCase {
            case_id: case.case_id.clone(),
            message: format!("no statement at violation line {}", case.violation_line),
        });
    }
    Ok(())
}

/// Loads a corpus from its manifest, validating every case.
pub fn load_corpus(manifest: &Path) -> Result<Vec<Case>, DataError> {
    let file = std::fs::File::open(manifest).map_err(|e| DataError::Io {
        path: manifest.display().to_string(),
        source: e,
    })?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut cases = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::Io {
            path: manifest.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(&line).map_err(|e| DataError::MalformedManifest {
                path: manifest.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        let label = match entry.label.as_str() {
            "FP" => true,
            "TP" => false,
            other => {
                return Err(DataError::MalformedManifest {
                    path: manifest.display().to_string(),
                    line: i + 1,
                    message: format!("label must be \"FP\" or \"TP\", got \"{other}\""),
                })
            }
        };
        let source_path = dir.join(&entry.source);
        let mir_source =
            std::fs::read_to_string(&source_path).map_err(|_| DataError::DanglingSource {
                case_id: entry.case_id.clone(),
                path: source_path.display().to_string(),
            })?;
        let case = Case {
            case_id: entry.case_id,
            mir_source,
            method_name: entry.method,
            violation_line: entry.violation_line,
            label,
            family: entry.family,
        };
        validate_case(&case)?;
        cases.push(case);
    }
    Ok(cases)
}

/// Writes `<case_id>.mir` files plus `manifest.jsonl` into `dir`.
pub fn write_corpus(dir: &Path, cases: &[Case]) -> Result<(), DataError> {
    let io_err = |path: &Path, e: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut manifest = String::new();
    for case in cases {
        let source = format!("{}.mir", case.case_id);
        let path = dir.join(&source);
        std::fs::write(&path, &case.mir_source).map_err(|e| io_err(&path, e))?;
        let entry = ManifestEntry {
            case_id: case.case_id.clone(),
            source,
            method: case.method_name.clone(),
            violation_line: case.violation_line,
            label: if case.label { "FP" } else { "TP" }.to_string(),
            family: case.family.clone(),
        };
        manifest.push_str(&serde_json::to_string(&entry).expect("manifest serializes"));
        manifest.push('\n');
    }
    let mut f = std::fs::File::create(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    f.write_all(manifest.as_bytes())
        .map_err(|e| io_err(&manifest_path, e))
}

/// One synthetic analysis report per case, flagging its violation line.
/// Stands in for a real SAST tool's output over the corpus.
pub fn synthesize_reports(cases: &[Case]) -> Vec<ViolationReport> {
    cases
        .iter()
        .map(|c| ViolationReport {
            case_id: c.case_id.clone(),
            source: format!("{}.mir", c.case_id),
            method: c.method_name.clone(),
            reported_line: c.violation_line,
            rule_id: format!("crypto/{}", c.family),
        })
        .collect()
}

/// Seeded stratified split: cases group by label, each group shuffles and
/// contributes `floor(ratio_test * group)` cases to test, remainders to
/// train.
pub fn split_dataset(cases: &[Case], ratio_test: f64, seed: u64) -> Result<SplitResult, DataError> {
    if !(ratio_test > 0.0 && ratio_test < 1.0) {
        return Err(DataError::BadRatio { ratio: ratio_test });
    }
    if cases.is_empty() {
        return Err(DataError::EmptyCases);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, name) in [(false, "TP"), (true, "FP")] {
        let mut group: Vec<Case> = cases.iter().filter(|c| c.label == label).cloned().collect();
        if group.is_empty() {
            warnings.push(format!("label class {name} has no members"));
            continue;
        }
        group.shuffle(&mut rng);
        let k_test = (ratio_test * group.len() as f64).floor() as usize;
        test.extend(group.drain(..k_test));
        train.extend(group);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(SplitResult {
        train,
        test,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Synthetic corpus generator
// ---------------------------------------------------------------------------

const INSECURE_ALGOS: [&str; 6] = [
    "DES",
    "DES/ECB/PKCS5Padding",
    "RC4",
    "Blowfish",
    "AES/ECB/PKCS5Padding",
    "MD5",
];
const SECURE_ALGOS: [&str; 5] = [
    "AES/GCM/NoPadding",
    "AES/CTR/NoPadding",
    "ChaCha20-Poly1305",
    "SHA-256",
    "RSA/OAEP",
];
const SEED_CONSTS: [i64; 5] = [42, 1234, 123456789, 7, 31337];
const SEED_SOURCES: [&str; 3] = [
    "entropy.Hardware.random",
    "crypto.SecureRandom.generateSeed",
    "os.Entropy.gather",
];
const KEY_CONSTS: [&str; 4] = ["hunter2", "password123", "0123456789abcdef", "secret"];
const KEY_SOURCES: [&str; 3] = [
    "env.KeyStore.fetch",
    "config.Vault.readKey",
    "kms.Client.decryptKey",
];
const METHOD_NAMES: [&str; 5] = ["process", "handle", "setup", "run", "apply"];
const COND_NAMES: [&str; 3] = ["flag", "cond", "mode"];

struct CaseText {
    method_name: String,
    param: String,
    lines: Vec<String>,
    violation_idx: usize,
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

/// Renders one case body. Both label branches consume the generator
/// identically, so the same stream position yields sibling variants that
/// differ only where the label demands it.
fn render_case(rng: &mut ChaCha8Rng, family: &str, fp: bool) -> CaseText {
    let method_name = pick(rng, &METHOD_NAMES).to_string();
    let param = pick(rng, &COND_NAMES).to_string();
    let insecure_algo = pick(rng, &INSECURE_ALGOS);
    let secure_algo = pick(rng, &SECURE_ALGOS);
    let seed_const = SEED_CONSTS[rng.random_range(0..SEED_CONSTS.len())];
    let seed_source = pick(rng, &SEED_SOURCES);
    let key_const = pick(rng, &KEY_CONSTS);
    let key_source = pick(rng, &KEY_SOURCES);
    let use_loop = rng.random_bool(0.3);
    let direct_literal = rng.random_bool(0.3);

    let (mut lines, violation_idx) = match family {
        "weak-algorithm" => {
            let algo = if fp { secure_algo } else { insecure_algo };
            if direct_literal {
                (
                    vec![
                        format!("call crypto.Cipher.getInstance(\"{algo}\") -> r;"),
                        "return r;".to_string(),
                    ],
                    0,
                )
            } else if use_loop {
                (
                    vec![
                        format!("a = const \"{algo}\";"),
                        "L0: call crypto.Cipher.getInstance(a) -> r;".to_string(),
                        format!("if {param} goto L0;"),
                        "return r;".to_string(),
                    ],
                    1,
                )
            } else {
                (
                    vec![
                        format!("a = const \"{algo}\";"),
                        "call crypto.Cipher.getInstance(a) -> r;".to_string(),
                        "return r;".to_string(),
                    ],
                    1,
                )
            }
        }
        "predictable-seed" => {
            let init = if fp {
                format!("call {seed_source}() -> s;")
            } else {
                format!("s = const {seed_const};")
            };
            if use_loop {
                (
                    vec![
                        init,
                        "L0: call random.SecureRandom.setSeed(s);".to_string(),
                        "b = call random.SecureRandom.nextInt();".to_string(),
                        format!("if {param} goto L0;"),
                        "return b;".to_string(),
                    ],
                    1,
                )
            } else {
                (
                    vec![
                        init,
                        "call random.SecureRandom.setSeed(s);".to_string(),
                        "b = call random.SecureRandom.nextInt();".to_string(),
                        "return b;".to_string(),
                    ],
                    1,
                )
            }
        }
        "constant-key" => {
            let init = if fp {
                format!("call {key_source}() -> k;")
            } else {
                format!("k = const \"{key_const}\";")
            };
            if use_loop {
                (
                    vec![
                        init,
                        "L0: call crypto.SecretKeySpec.create(k) -> ks;".to_string(),
                        format!("if {param} goto L0;"),
                        "return ks;".to_string(),
                    ],
                    1,
                )
            } else {
                (
                    vec![
                        init,
                        "call crypto.SecretKeySpec.create(k) -> ks;".to_string(),
                        "return ks;".to_string(),
                    ],
                    1,
                )
            }
        }
        "guard-flow" => {
            // Both variants carry both constants; only the branch target
            // decides whether the fix dominates the flagged call.
            if fp {
                (
                    vec![
                        format!("a = const \"{insecure_algo}\";"),
                        format!("if {param} goto L0;"),
                        "nop;".to_string(),
                        format!("L0: a = const \"{secure_algo}\";"),
                        "call crypto.Cipher.getInstance(a) -> r;".to_string(),
                        "return r;".to_string(),
                    ],
                    4,
                )
            } else {
                (
                    vec![
                        format!("a = const \"{insecure_algo}\";"),
                        format!("if {param} goto L0;"),
                        format!("a = const \"{secure_algo}\";"),
                        "L0: call crypto.Cipher.getInstance(a) -> r;".to_string(),
                        "return r;".to_string(),
                    ],
                    3,
                )
            }
        }
        "dead-store" => {
            let (first, second) = if fp {
                (insecure_algo, secure_algo)
            } else {
                (secure_algo, insecure_algo)
            };
            (
                vec![
                    format!("a = const \"{first}\";"),
                    format!("a = const \"{second}\";"),
                    "call crypto.Cipher.getInstance(a) -> r;".to_string(),
                    "return r;".to_string(),
                ],
                2,
            )
        }
        other => panic!("unknown family `{other}`"),
    };

    // Filler statements on fresh variables; insertion never lands after the
    // trailing return.
    let mut violation_idx = violation_idx;
    let n_fillers = rng.random_range(0..=3);
    for j in 0..n_fillers {
        let pos = rng.random_range(0..lines.len());
        let value: i64 = rng.random_range(0..1000);
        lines.insert(pos, format!("t{j} = const {value};"));
        if pos <= violation_idx {
            violation_idx += 1;
        }
    }

    CaseText {
        method_name,
        param,
        lines,
        violation_idx,
    }
}

/// Deterministic synthetic corpus: `round(fp_fraction * n)` cases labeled
/// FP, families drawn by weight, every case valid by construction.
pub fn generate_synthetic_corpus(cfg: &GenConfig) -> Result<Vec<Case>, DataError> {
    if cfg.n_cases < 1 {
        return Err(DataError::BadGenConfig {
            message: "n_cases must be at least 1".to_string(),
        });
    }
    if !(0.0..=1.0).contains(&cfg.fp_fraction) {
        return Err(DataError::BadGenConfig {
            message: format!("fp_fraction {} outside [0, 1]", cfg.fp_fraction),
        });
    }
    if cfg.family_weights.is_empty()
        || cfg.family_weights.iter().any(|(_, w)| *w < 0.0)
        || cfg.family_weights.iter().all(|(_, w)| *w == 0.0)
    {
        return Err(DataError::BadGenConfig {
            message: "family weights must be nonnegative and not all zero".to_string(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_fp = (cfg.fp_fraction * cfg.n_cases as f64).round() as usize;
    let mut labels = vec![false; cfg.n_cases];
    for l in labels.iter_mut().take(n_fp) {
        *l = true;
    }
    labels.shuffle(&mut rng);

    let weight_total: f64 = cfg.family_weights.iter().map(|(_, w)| w).sum();
    let mut cases = Vec::with_capacity(cfg.n_cases);
    for (i, &fp) in labels.iter().enumerate() {
        let mut draw = rng.random::<f64>() * weight_total;
        let mut family = cfg.family_weights.last().unwrap().0.as_str();
        for (name, w) in &cfg.family_weights {
            if draw < *w {
                family = name;
                break;
            }
            draw -= w;
        }
        let text = render_case(&mut rng, family, fp);
        let mut mir_source = format!("method {}({}) {{\n", text.method_name, text.param);
        for line in &text.lines {
            mir_source.push_str(line);
            mir_source.push('\n');
        }
        mir_source.push_str("}\n");
        cases.push(Case {
            case_id: format!("case-{i:04}"),
            mir_source,
            method_name: text.method_name,
            violation_line: text.violation_idx as u32 + 2,
            label: fp,
            family: family.to_string(),
        });
    }
    Ok(cases)
}
