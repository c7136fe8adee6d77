use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use edgespot::dsp::{melspec, pcen, read_wav, MelConfig, PcenParams};
use edgespot::eval::{auroc, det_at_far, make_episodes, EpisodeReport};
use edgespot::model::{footprint, reference_footprint, ModelConfig};
use edgespot::proto::{calibrate_threshold, PrototypeStore};
use edgespot::weights::{random_bundle, save_tensors, spectral_bundle, Record};

use crate::data::{collect_wavs, dir_label, embed_all, label_dirs, load_model, wavs_in};
use crate::{
    CountArgs, DetectArgs, EnrollArgs, EvaluateArgs, FeaturizeArgs, Format, InitArgs, MetricsArgs,
    WeightKind,
};

fn write_output(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {}: no such file", path.display());
    }
    Ok(())
}

pub fn featurize(a: FeaturizeArgs) -> Result<()> {
    let wave = read_wav(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mel = melspec(&wave, &MelConfig::default())
        .with_context(|| format!("featurizing {}", a.input.display()))?;
    let (name, data) = if a.pcen {
        ("pcen", pcen(&mel, &PcenParams::default())?.into_data())
    } else {
        ("mel", mel.data().to_vec())
    };
    let record = Record::new(name, &[mel.n_mels(), mel.frames()], data)?;
    let mut buf = Vec::new();
    save_tensors(&[record], &mut buf)?;
    write_output(&a.output, &buf)?;
    println!("{} {}x{} -> {}", name, mel.n_mels(), mel.frames(), a.output.display());
    Ok(())
}

pub fn enroll(a: EnrollArgs) -> Result<()> {
    require_file(&a.weights, "weights")?;
    let keywords: Vec<(String, Vec<std::path::PathBuf>)> = match &a.root {
        Some(root) => label_dirs(root)?.into_iter().collect(),
        None => {
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for dir in &a.keywords {
                if !dir.is_dir() {
                    bail!("{}: not a directory", dir.display());
                }
                let label = dir_label(dir)?;
                if !seen.insert(label.clone()) {
                    bail!("duplicate keyword directory name {label:?} ({})", dir.display());
                }
                out.push((label, wavs_in(dir)?));
            }
            out
        }
    };
    let k = a.shots as usize;
    let short: Vec<String> = keywords
        .iter()
        .filter(|(_, files)| files.len() < k)
        .map(|(label, files)| format!("{label} ({} files)", files.len()))
        .collect();
    if !short.is_empty() {
        bail!("fewer than {k} enrollment files for: {}", short.join(", "));
    }

    let model = load_model(&a.weights)?;
    let mut store = PrototypeStore::new(a.threshold)?;
    for (label, files) in &keywords {
        let shots = embed_all(&model, &files[..k])?;
        store.enroll(label.clone(), &shots)?;
    }
    write_output(&a.output, store.to_text().as_bytes())?;
    println!("enrolled {} keywords with {k} shots -> {}", store.len(), a.output.display());
    Ok(())
}

pub fn detect(a: DetectArgs) -> Result<()> {
    require_file(&a.weights, "weights")?;
    require_file(&a.store, "prototype store")?;
    let text = fs::read_to_string(&a.store).with_context(|| format!("reading {}", a.store.display()))?;
    let mut store =
        PrototypeStore::from_text(&text).with_context(|| format!("parsing {}", a.store.display()))?;
    let inputs = collect_wavs(&a.inputs)?;
    let negatives = collect_wavs(&a.negatives)?;
    let model = load_model(&a.weights)?;

    if let Some(t) = a.threshold {
        store.set_threshold(t)?;
    } else if let Some(far) = a.far {
        if negatives.is_empty() {
            bail!("no negative WAV files found for calibration");
        }
        let scores = embed_all(&model, &negatives)?
            .iter()
            .map(|e| Ok(store.detect(e)?.score))
            .collect::<Result<Vec<_>>>()?;
        store.set_threshold(calibrate_threshold(&scores, far)?)?;
    }

    let embeddings = embed_all(&model, &inputs)?;
    let mut out = String::new();
    if a.format == Format::Tsv {
        out.push_str("path\tlabel\tscore\taccepted\n");
    }
    for (path, e) in inputs.iter().zip(&embeddings) {
        let d = store.detect(e)?;
        match a.format {
            Format::Tsv => {
                let _ = writeln!(out, "{}\t{}\t{:.6}\t{}", path.display(), d.label, d.score, d.accepted);
            }
            Format::Text => {
                let verdict = if d.accepted { "accept" } else { "reject" };
                let _ = writeln!(out, "{} {} {:.6} {verdict}", path.display(), d.label, d.score);
            }
        }
    }
    if a.format == Format::Text {
        let _ = writeln!(out, "threshold {}", store.threshold());
    }
    print!("{out}");
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    require_file(&a.weights, "weights")?;
    let layout = label_dirs(&a.root)?;
    let model = load_model(&a.weights)?;
    let (labels, paths): (Vec<String>, Vec<std::path::PathBuf>) = layout
        .iter()
        .flat_map(|(label, files)| files.iter().map(move |f| (label.clone(), f.clone())))
        .unzip();
    let embeddings = embed_all(&model, &paths)?;
    let dataset: Vec<_> = labels.into_iter().zip(embeddings).collect();
    let episodes = make_episodes(
        &dataset,
        a.targets,
        a.unknown,
        a.shots as usize,
        a.trials as usize,
        a.seed,
    )?;
    let report = EpisodeReport::new(&episodes, &a.far)?;

    if let Some(path) = &a.scores_out {
        let mut s = String::new();
        for ep in &episodes {
            let store = ep.store()?;
            for t in &ep.positives {
                let _ = writeln!(s, "pos {}", store.detect(&t.embedding)?.score);
            }
            for t in &ep.negatives {
                let _ = writeln!(s, "neg {}", store.detect(&t.embedding)?.score);
            }
        }
        write_output(path, s.as_bytes())?;
    }

    match a.format {
        Format::Tsv => print!("{}", report.to_text()),
        Format::Text => {
            println!(
                "{} episodes, {} targets vs {} unknown, {}-shot, seed {}",
                episodes.len(),
                a.targets,
                a.unknown,
                a.shots,
                a.seed
            );
            for (i, far) in a.far.iter().enumerate() {
                let acc = report.acc(i);
                let det = report.det(i);
                println!("ACC@{}% {:.4} ± {:.4}", far * 100.0, acc.mean, acc.std);
                println!("DET@{}% {:.4} ± {:.4}", far * 100.0, det.mean, det.std);
            }
            let au = report.auroc();
            println!("AUROC {:.4} ± {:.4}", au.mean, au.std);
        }
    }
    Ok(())
}

pub fn count(a: CountArgs) -> Result<()> {
    let cfg = ModelConfig::new(a.variant.into(), a.tau)?;
    let fp = footprint(&cfg);
    match a.format {
        Format::Tsv => print!("{}", fp.to_tsv()),
        Format::Text => {
            println!("{} on a 40x101 input", cfg.name());
            let width = fp.layers.iter().map(|l| l.name.len()).max().unwrap_or(4).max(5);
            println!("{:width$}  {:>9}  {:>11}  {:>10}", "layer", "params", "macs", "norm_ops");
            for l in &fp.layers {
                println!("{:width$}  {:>9}  {:>11}  {:>10}", l.name, l.params, l.macs, l.norm_ops);
            }
            println!(
                "{:width$}  {:>9}  {:>11}  {:>10}",
                "total",
                fp.total_params(),
                fp.total_macs(),
                fp.total_norm_ops()
            );
            println!(
                "convention: conv MACs = outputs x in/groups x kernel; attention = QKV + QK^T + AV; \
                 biases, activations, softmax, pooling, PCEN = 0 MACs; \
                 norms reported as norm_ops (2/element), excluded from MACs; \
                 params exclude running statistics"
            );
        }
    }
    if a.trace {
        print!("{}", fp.shape_trace());
    }
    if a.compare_paper {
        match reference_footprint(cfg.variant, cfg.tau) {
            Some((p, m)) => {
                let dev = |ours: usize, theirs: f64| 100.0 * (ours as f64 - theirs) / theirs;
                println!(
                    "reference params {:.1}k ({:+.2}%), macs {:.1}M ({:+.2}%)",
                    p / 1e3,
                    dev(fp.total_params(), p),
                    m / 1e6,
                    dev(fp.total_macs(), m)
                );
            }
            None => println!("no published reference for {}", cfg.name()),
        }
    }
    Ok(())
}

/// Parses `label score` lines into positive and negative score lists.
fn read_score_list(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(label), Some(score), None) = (parts.next(), parts.next(), parts.next()) else {
            bail!("{}:{}: expected `label score`", path.display(), i + 1);
        };
        let score: f64 = score
            .parse()
            .ok()
            .filter(|s: &f64| !s.is_nan())
            .with_context(|| format!("{}:{}: invalid score {score:?}", path.display(), i + 1))?;
        match label.to_ascii_lowercase().as_str() {
            "pos" | "positive" | "target" | "1" => pos.push(score),
            "neg" | "negative" | "nontarget" | "non-target" | "0" => neg.push(score),
            other => bail!("{}:{}: unknown label {other:?}", path.display(), i + 1),
        }
    }
    Ok((pos, neg))
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let (pos, neg) = read_score_list(&a.scores)?;
    let points = a
        .far
        .iter()
        .map(|&f| det_at_far(&pos, &neg, f))
        .collect::<edgespot::Result<Vec<_>>>()?;
    let au = auroc(&pos, &neg)?;
    match a.format {
        Format::Tsv => {
            println!("metric\tfar\tthreshold\tvalue");
            for p in &points {
                println!("det\t{}\t{}\t{}", p.target_far, p.threshold, p.rate);
            }
            println!("auroc\t\t\t{au}");
        }
        Format::Text => {
            println!("{} positives, {} negatives", pos.len(), neg.len());
            for p in &points {
                println!(
                    "DET@{}% {:.4} (threshold {:.6}, measured FAR {:.4})",
                    p.target_far * 100.0,
                    p.rate,
                    p.threshold,
                    p.far
                );
            }
            println!("AUROC {au:.6}");
        }
    }
    Ok(())
}

pub fn init_weights(a: InitArgs) -> Result<()> {
    let cfg = ModelConfig::new(a.variant.into(), a.tau)?;
    let bundle = match a.kind {
        WeightKind::Random => random_bundle(&cfg, a.seed),
        WeightKind::Spectral => spectral_bundle(&cfg),
    };
    let bytes = bundle.to_bytes()?;
    write_output(&a.output, &bytes)?;
    println!("{} bytes -> {}", bytes.len(), a.output.display());
    Ok(())
}
