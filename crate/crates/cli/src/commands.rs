use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};

use sic_core::codec::{decode_coded, decode_progressive, encode_progressive, ContextModel, SicBitstream};
use sic_core::corpus::{corpus_model, level_sweep, synthetic_corpus};
use sic_core::io::{fmt_float, parse_sweep, read_pgm, report_value, write_pgm, Problem, SweepPoint};
use sic_core::rdp::{blahut_arimoto, rdp_lagrangian, synonymous_rdp, RatePoint, SolverConfig};
use sic_core::semsrc::{
    semantic_entropy, shannon_entropy, synset_probability, DiscreteDistribution,
    SemanticVariable, SynonymousPartition,
};
use sic_core::transform::{analysis, perceptual_stub, psnr, synthesis, Image, TransformConfig};
use sic_core::Error;

use crate::output::{emit, Staged};
use crate::{
    Cli, Command, CorpusArgs, DecodeArgs, EncodeArgs, MeasuresArgs, RdpArgs, Solver, SweepArgs,
    TransformArg,
};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Input(String),
    NotConverged(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::NotConverged(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::NotConverged(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_not_converged() {
            Failure::NotConverged(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

struct Ctx<'a> {
    seed: u64,
    out: Option<&'a Path>,
    quiet: bool,
}

impl Ctx<'_> {
    fn note(&self, msg: impl fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn wrote(&self, paths: &[PathBuf]) {
        for p in paths {
            self.note(format_args!("wrote {}", p.display()));
        }
    }

    fn emit(&self, bytes: &[u8]) -> Outcome {
        if let Some(p) = emit(self.out, bytes)? {
            self.wrote(&[p]);
        }
        Ok(())
    }

    fn require_out(&self, what: &str) -> Outcome<&Path> {
        self.out
            .ok_or_else(|| Failure::Usage(format!("{what} needs --out <path>")))
    }

    fn reject_out(&self, what: &str, instead: &str) -> Outcome {
        match self.out {
            Some(_) => Err(Failure::Usage(format!("{what} does not take --out; use {instead}"))),
            None => Ok(()),
        }
    }
}

pub fn run(cli: &Cli) -> Outcome {
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out.as_deref(),
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Measures(a) => measures(&ctx, a),
        Command::Rdp(a) => rdp(&ctx, a),
        Command::Encode(a) => encode(&ctx, a),
        Command::Decode(a) => decode(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Corpus(a) => corpus(&ctx, a),
    }
}

fn read_text(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn read_bytes(path: &Path) -> Outcome<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn in_file<T>(path: &Path, r: sic_core::Result<T>) -> Outcome<T> {
    r.map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn json_line(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s.into_bytes()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DistDoc {
    Bare(DiscreteDistribution),
    Object {
        probs: DiscreteDistribution,
        #[serde(default)]
        partition: Option<Vec<Vec<usize>>>,
    },
}

fn measures(ctx: &Ctx, a: &MeasuresArgs) -> Outcome {
    let text = read_text(&a.dist)?;
    let doc: DistDoc = in_file(&a.dist, serde_json::from_str(&text).map_err(Error::from))?;
    let (dist, embedded) = match doc {
        DistDoc::Bare(d) => (d, None),
        DistDoc::Object { probs, partition } => (probs, partition),
    };
    let n = dist.len();
    let partition = match (&a.partition, embedded) {
        (Some(_), Some(_)) => {
            return Err(Failure::Usage(
                "partition given both in --dist and --partition".into(),
            ))
        }
        (Some(path), None) => {
            let groups: Vec<Vec<usize>> =
                in_file(path, serde_json::from_str(&read_text(path)?).map_err(Error::from))?;
            in_file(path, SynonymousPartition::new(groups, n))?
        }
        (None, Some(groups)) => in_file(&a.dist, SynonymousPartition::new(groups, n))?,
        (None, None) => SynonymousPartition::singletons(n),
    };
    let synsets = (0..partition.num_groups())
        .map(|k| synset_probability(&dist, &partition, k).map(report_value))
        .collect::<sic_core::Result<Vec<_>>>()?;
    let h = shannon_entropy(&dist);
    let hs = semantic_entropy(&SemanticVariable::new(dist, partition)?);
    ctx.emit(&json_line(&json!({
        "shannon_entropy": report_value(h),
        "semantic_entropy": report_value(hs),
        "difference": report_value(h - hs),
        "synset_probabilities": synsets,
    })))
}

fn solver_config(ctx: &Ctx, a: &RdpArgs) -> Outcome<SolverConfig> {
    let mut cfg = match &a.config {
        Some(p) => in_file(p, serde_json::from_str(&read_text(p)?).map_err(Error::from))?,
        None => SolverConfig::default(),
    };
    cfg.seed = ctx.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn rdp(ctx: &Ctx, a: &RdpArgs) -> Outcome {
    let problem = in_file(&a.problem, Problem::from_json(&read_text(&a.problem)?))?;
    let points = match (&a.sweep, a.lambda_d) {
        (Some(path), _) => in_file(path, parse_sweep(&read_text(path)?))?,
        (None, Some(lambda_d)) => {
            let text = serde_json::to_string(&[SweepPoint { lambda_d, lambda_p: a.lambda_p.unwrap_or(0.0) }])
                .expect("plain numbers serialize");
            parse_sweep(&text)?
        }
        (None, None) => unreachable!("clap requires one of --sweep and --lambda-d"),
    };
    let cfg = solver_config(ctx, a)?;

    let mut csv = String::from("lambda_d,lambda_p,rate_bits,distortion,perception_bits,converged\n");
    let mut stalled = 0;
    for p in &points {
        let result = match a.solver {
            Solver::Classical => blahut_arimoto(&problem.source, &problem.distortion, p.lambda_d, &cfg),
            Solver::Perception => {
                rdp_lagrangian(&problem.source, &problem.distortion, p.lambda_d, p.lambda_p, &cfg)
            }
            Solver::Synonymous => synonymous_rdp(
                &problem.source,
                &problem.distortion,
                &problem.partition,
                p.lambda_d,
                p.lambda_p,
                &cfg,
            ),
        };
        let point: RatePoint = match result {
            Ok(pt) => pt,
            Err(Error::NotConverged { best, .. }) => {
                stalled += 1;
                *best
            }
            Err(e) => return Err(e.into()),
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_float(p.lambda_d),
            fmt_float(p.lambda_p),
            fmt_float(point.rate),
            fmt_float(point.distortion),
            fmt_float(point.perception),
            point.converged
        ));
    }
    ctx.emit(csv.as_bytes())?;
    if stalled > 0 {
        return Err(Failure::NotConverged(format!(
            "{stalled} of {} points did not converge (marked converged=false)",
            points.len()
        )));
    }
    Ok(())
}

fn load_model(path: &Path) -> Outcome<ContextModel> {
    in_file(path, ContextModel::from_json(&read_text(path)?))
}

fn load_transform(t: &TransformArg, model: &ContextModel) -> Outcome<TransformConfig> {
    let cfg = match &t.transform {
        Some(p) => in_file(p, TransformConfig::from_json(&read_text(p)?))?,
        None => TransformConfig::default(),
    };
    if cfg.channels() != model.channels {
        return Err(Failure::Input(format!(
            "transform has {} channels, model expects {}",
            cfg.channels(),
            model.channels
        )));
    }
    cfg.check_symbol_range(model.symbol_min, model.symbol_max)?;
    Ok(cfg)
}

fn load_image(path: &Path) -> Outcome<Image> {
    in_file(path, read_pgm(&read_bytes(path)?))
}

fn encode(ctx: &Ctx, a: &EncodeArgs) -> Outcome {
    let out = ctx.require_out("encode")?;
    let model = load_model(&a.model)?;
    let cfg = load_transform(&a.transform, &model)?;
    let image = load_image(&a.input)?;
    let latent = analysis(&image, &cfg)?;
    let levels = a.levels.unwrap_or(model.levels);
    let stream = encode_progressive(&latent, levels, &model, ctx.seed)?;
    let bits = stream.payload_bits();
    ctx.emit(&stream.to_bytes())?;
    ctx.note(format_args!(
        "{levels} of {} levels, {bits} payload bits, {} bpp -> {}",
        model.levels,
        fmt_float(bits as f64 / (image.width() * image.height()) as f64),
        out.display()
    ));
    Ok(())
}

fn metrics_path(a: &DecodeArgs) -> PathBuf {
    if let Some(p) = &a.metrics {
        return p.clone();
    }
    match Path::new(&a.out_prefix).parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join("metrics.json"),
        _ => PathBuf::from("metrics.json"),
    }
}

fn decode(ctx: &Ctx, a: &DecodeArgs) -> Outcome {
    ctx.reject_out("decode", "--out-prefix and --metrics")?;
    if a.out_prefix.is_empty() {
        return Err(Failure::Usage("--out-prefix must not be empty".into()));
    }
    let model = load_model(&a.model)?;
    let cfg = load_transform(&a.transform, &model)?;
    let stream = in_file(&a.input, SicBitstream::from_bytes(&read_bytes(&a.input)?))?;
    let reference = match &a.reference {
        Some(p) => Some(load_image(p)?),
        None => None,
    };
    let decoded = decode_progressive(&stream, &model, a.samples)?;
    let images = decoded
        .samples
        .iter()
        .map(|s| synthesis(s, &cfg))
        .collect::<sic_core::Result<Vec<_>>>()?;

    let mut staged = Staged::default();
    let mut rows = Vec::with_capacity(images.len());
    let (against, label) = match reference {
        Some(r) => (r, "input"),
        None => (synthesis(&decode_coded(&stream, &model)?, &cfg)?, "synonymous"),
    };
    for (j, img) in images.iter().enumerate() {
        let path = PathBuf::from(format!("{}{}.pgm", a.out_prefix, j + 1));
        rows.push(json!({
            "j": j + 1,
            "file": path.to_string_lossy(),
            "psnr_db": report_value(psnr(&against, img)?),
            "stub": report_value(perceptual_stub(&against, img)?),
        }));
        staged.add(&path, &write_pgm(img))?;
    }
    if !a.no_metrics {
        let pixels = (against.width() * against.height()) as f64;
        let bits = stream.payload_bits();
        let metrics = json!({
            "levels": stream.header.levels,
            "coded_levels": decoded.coded_levels,
            "seed": stream.header.seed,
            "payload_bits": bits,
            "bits_per_pixel": report_value(bits as f64 / pixels),
            "reference": label,
            "samples": rows,
        });
        staged.add(&metrics_path(a), &json_line(&metrics))?;
    }
    ctx.wrote(&staged.commit()?);
    Ok(())
}

fn sweep(ctx: &Ctx, a: &SweepArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let cfg = load_transform(&a.transform, &model)?;
    let image = load_image(&a.input)?;
    let rows = level_sweep(&image, &cfg, &model, ctx.seed)?;
    let mut csv = String::from("l,payload_bits,bits_per_pixel,psnr_db,stub\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.level,
            r.payload_bits,
            fmt_float(r.bits_per_pixel),
            fmt_float(r.psnr_db),
            fmt_float(r.stub)
        ));
    }
    ctx.emit(csv.as_bytes())
}

fn corpus(ctx: &Ctx, a: &CorpusArgs) -> Outcome {
    ctx.reject_out("corpus", "--out-dir")?;
    let model = corpus_model(&TransformConfig::default(), a.levels)?;
    fs::create_dir_all(&a.out_dir)?;
    let mut staged = Staged::default();
    for (name, img) in synthetic_corpus() {
        staged.add(&a.out_dir.join(format!("{name}.pgm")), &write_pgm(&img))?;
    }
    let mut text = model.to_json()?;
    text.push('\n');
    staged.add(&a.out_dir.join("ctx_static.json"), text.as_bytes())?;
    ctx.wrote(&staged.commit()?);
    Ok(())
}
