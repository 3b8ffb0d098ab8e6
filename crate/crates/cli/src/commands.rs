use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use copytrace::coord_table::{read_table, write_table, CoordTable};
use copytrace::edit_ops::{make_pair, EditPipeline};
use copytrace::grad_suite::{run_suite, LossKind, SuiteOptions};
use copytrace::heatmap::render_grid;
use copytrace::loss_kernel::{
    affinity, affinity_entropy, bce_matcher, copynce_directional, copynce_symmetric, infonce, koleo,
    objective_descriptor, objective_matcher, CopyNce, GradCheckOptions, DESCRIPTOR_W_KOLEO, DESCRIPTOR_W_NCE,
    MATCHER_W_NCE,
};
use copytrace::matrix::{cosine, Matrix, TokenMatrix};
use copytrace::retrieval_eval::{
    background_scores, euclidean_score, evaluate, feature_stretch, normalize_pairs, rank_order, read_ground_truth,
    read_scores, top_inner_products, Embeddings, Metrics, PostProcessConfig, ScoredPair,
};
use copytrace::rng::derive_seed;
use copytrace::supervision::{pixtrace_targets, read_targets, write_targets, PatchGrid, TargetDistribution};
use copytrace::tokens::{read_tokens, write_tokens};
use copytrace::toy_encoder::{encode_global, encode_patches, global_from_tokens, ToyEncoderConfig};
use copytrace::{Error, Image, Result};

use crate::manifest::{beside, RunManifest};
use crate::{EncodeArgs, EvalArgs, GenPairsArgs, GradCheckArgs, HeatmapArgs, LossArgs, LossMode, SuperviseArgs};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::from(e).at_path(path)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(io_err(path))
}

fn pngs_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn encode(args: &EncodeArgs) -> Result<()> {
    let cfg = ToyEncoderConfig {
        patch_size: args.patch_size,
        coord_weight: args.coord_weight,
    };
    let mut manifest = RunManifest::new("encode", args, None)?;
    manifest.input(&args.input);
    if args.input.is_dir() {
        let files = pngs_in(&args.input)?;
        if files.is_empty() {
            return Err(Error::parameter(format!("no PNG files in {}", args.input.display())));
        }
        let mut rows = Vec::with_capacity(files.len());
        for f in &files {
            log::debug!("encoding {}", f.display());
            let img = Image::load_png(f)?;
            rows.push(encode_global(&img, &cfg).map_err(|e| e.at_path(f))?);
        }
        let ids: Vec<String> = files.iter().map(|f| stem(f)).collect();
        write_tokens(&args.out, &Matrix::from_rows(&rows)?, Some(&ids))?;
        println!("encoded {} images into {}", files.len(), args.out.display());
    } else {
        let img = Image::load_png(&args.input)?;
        if args.global {
            let g = encode_global(&img, &cfg).map_err(|e| e.at_path(&args.input))?;
            let m = Matrix::from_vec(1, g.len(), g)?;
            write_tokens(&args.out, &m, Some(&[stem(&args.input)]))?;
        } else {
            let t = encode_patches(&img, &cfg).map_err(|e| e.at_path(&args.input))?;
            write_tokens(&args.out, &t, None)?;
            println!("tokens {} x {}", t.rows(), t.cols());
        }
    }
    manifest.output(&args.out);
    manifest.write(&beside(&args.out))
}

fn load_pipeline(path: &Path) -> Result<EditPipeline> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    EditPipeline::from_json(&text).map_err(|e| e.at_path(path))
}

pub fn gen_pairs(args: &GenPairsArgs) -> Result<()> {
    let mut pa = load_pipeline(&args.pipeline_a)?;
    let mut pb = load_pipeline(&args.pipeline_b)?;
    let input = if args.input.is_dir() {
        pngs_in(&args.input)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::parameter(format!("no PNG files in {}", args.input.display())))?
    } else {
        args.input.clone()
    };
    let original = Image::load_png(&input)?;
    pa.seed = derive_seed(args.seed, "pipeline_a").wrapping_add(pa.seed);
    pb.seed = derive_seed(args.seed, "pipeline_b").wrapping_add(pb.seed);
    log::info!("effective seeds a={} b={}", pa.seed, pb.seed);
    let pair = make_pair(&original, &pa, &pb)?;

    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let mut manifest = RunManifest::new("gen-pairs", args, Some(args.seed))?;
    manifest.input(&input).input(&args.pipeline_a).input(&args.pipeline_b);
    let out = |name: &str| args.out.join(name);
    pair.image_a.save_png(out("image_a.png"))?;
    pair.image_b.save_png(out("image_b.png"))?;
    for (name, table) in [
        ("table_ao.ptt", &pair.table_ao),
        ("table_bo.ptt", &pair.table_bo),
        ("table_ab.ptt", &pair.table_ab),
        ("table_ba.ptt", &pair.table_ba),
    ] {
        let path = out(name);
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        write_table(table, std::io::BufWriter::new(f)).map_err(|e| e.at_path(&path))?;
        manifest.output(path);
    }
    fs::write(out("pipeline_a.json"), pa.to_json()).map_err(io_err(&out("pipeline_a.json")))?;
    fs::write(out("pipeline_b.json"), pb.to_json()).map_err(io_err(&out("pipeline_b.json")))?;
    manifest
        .output(out("image_a.png"))
        .output(out("image_b.png"))
        .output(out("pipeline_a.json"))
        .output(out("pipeline_b.json"));
    manifest.write(&out("manifest.json"))?;

    println!("view a       {} x {}", pair.image_a.height(), pair.image_a.width());
    println!("view b       {} x {}", pair.image_b.height(), pair.image_b.width());
    println!("tracked a->b {}", pair.table_ab.tracked_count());
    println!("tracked b->a {}", pair.table_ba.tracked_count());
    Ok(())
}

fn load_table(path: &Path) -> Result<CoordTable> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_table(std::io::BufReader::new(f)).map_err(|e| e.at_path(path))
}

#[derive(Serialize)]
struct TargetSummary {
    n_q: usize,
    n_r: usize,
    gamma: Option<f64>,
    unmasked_rows: usize,
    mean_support: f64,
    mean_entropy: f64,
}

fn summarize(t: &TargetDistribution) -> TargetSummary {
    let h = t.row_entropies();
    let active = t.unmasked_rows();
    TargetSummary {
        n_q: t.n_q(),
        n_r: t.n_r(),
        gamma: t.gamma.filter(|g| g.is_finite()),
        unmasked_rows: active,
        mean_support: t.mean_support(),
        mean_entropy: if active > 0 { h.iter().sum::<f64>() / active as f64 + 0.0 } else { 0.0 },
    }
}

pub fn supervise(args: &SuperviseArgs) -> Result<()> {
    let name = if args.reverse { "table_ba.ptt" } else { "table_ab.ptt" };
    let table_path = args.pair.join(name);
    let table = load_table(&table_path)?;
    let grid_q = PatchGrid::new(table.dims(), args.patch_size)?;
    let grid_r = PatchGrid::new(table.source_dims(), args.patch_size)?;
    let targets = pixtrace_targets(&table, &grid_q, &grid_r, args.gamma)?;
    let f = fs::File::create(&args.out).map_err(io_err(&args.out))?;
    write_targets(&targets, std::io::BufWriter::new(f)).map_err(|e| e.at_path(&args.out))?;

    let summary = summarize(&targets);
    let summary_path = args.out.with_extension("summary.json");
    write_json(&summary_path, &summary)?;
    let mut manifest = RunManifest::new("supervise", args, None)?;
    manifest.input(&table_path).output(&args.out).output(&summary_path);
    manifest.write(&beside(&args.out))?;

    println!("query patches      {}", summary.n_q);
    println!("reference patches  {}", summary.n_r);
    println!("unmasked rows      {}", summary.unmasked_rows);
    println!("mean support       {:.4}", summary.mean_support);
    println!("mean row entropy   {:.6}", summary.mean_entropy);
    Ok(())
}

fn load_targets(path: &Path) -> Result<TargetDistribution> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_targets(std::io::BufReader::new(f)).map_err(|e| e.at_path(path))
}

fn load_tokens(path: &Path) -> Result<TokenMatrix> {
    Ok(read_tokens(path)?.0)
}

#[derive(Serialize)]
struct Component {
    name: &'static str,
    weight: f64,
    value: f64,
}

#[derive(Serialize)]
struct LossReport {
    mode: LossMode,
    value: f64,
    kl: f64,
    target_entropy: f64,
    tau: f64,
    w_nce: f64,
    components: Vec<Component>,
    grad_norms: BTreeMap<String, f64>,
}

pub fn loss(args: &LossArgs) -> Result<()> {
    let tq = load_tokens(&args.tokens_q)?;
    let tr = load_tokens(&args.tokens_r)?;
    let t_qr = load_targets(&args.targets)?;
    let nce: CopyNce = match &args.targets_rq {
        Some(p) => copynce_symmetric(&tq, &tr, &t_qr, &load_targets(p)?, args.tau)?,
        None => copynce_directional(&tq, &tr, &t_qr, args.tau)?,
    };
    let gq = global_from_tokens(&tq.normalized_rows());
    let gr = global_from_tokens(&tr.normalized_rows());
    let (objective, w_nce) = match args.mode {
        LossMode::Matcher => {
            let w = args.w_nce.unwrap_or(MATCHER_W_NCE);
            // toy matcher head: centred global cosine as the logit
            let logit = (cosine(&gq, &gr) - 0.5) / args.tau;
            let bce = bce_matcher(logit, args.label)?;
            (objective_matcher(&bce, &nce.loss, w)?, w)
        }
        LossMode::Descriptor => {
            let w = args.w_nce.unwrap_or(DESCRIPTOR_W_NCE);
            let mut rows = vec![gr.clone()];
            if let Some(p) = &args.negatives {
                let neg = load_tokens(p)?;
                if neg.cols() != gr.len() {
                    return Err(Error::mismatch(format!(
                        "negatives have dim {}, descriptors have {}",
                        neg.cols(),
                        gr.len()
                    ))
                    .at_path(p));
                }
                rows.extend(neg.iter_rows().map(<[f64]>::to_vec));
            }
            let candidates = Matrix::from_rows(&rows)?;
            let nce_loss = infonce(&gq, &candidates, 0, args.tau)?;
            let mut batch = vec![gq.clone()];
            batch.extend(rows);
            let spread = koleo(&Matrix::from_rows(&batch)?)?;
            (objective_descriptor(&nce_loss, &spread, &nce.loss, w, DESCRIPTOR_W_KOLEO)?, w)
        }
    };
    let report = LossReport {
        mode: args.mode,
        value: objective.value,
        kl: nce.kl,
        target_entropy: nce.target_entropy,
        tau: args.tau,
        w_nce,
        components: objective
            .terms
            .iter()
            .map(|t| Component {
                name: t.name,
                weight: t.weight,
                value: t.value,
            })
            .collect(),
        grad_norms: objective.grad_norms(),
    };
    write_json(&args.out, &report)?;
    let mut manifest = RunManifest::new("loss", args, None)?;
    manifest.input(&args.tokens_q).input(&args.tokens_r).input(&args.targets);
    if let Some(p) = &args.targets_rq {
        manifest.input(p);
    }
    if let Some(p) = &args.negatives {
        manifest.input(p);
    }
    manifest.output(&args.out).write(&beside(&args.out))?;

    println!("{:<12} {:>10} {:>14}", "component", "weight", "value");
    for c in &report.components {
        println!("{:<12} {:>10.4} {:>14.8}", c.name, c.weight, c.value);
    }
    println!("{:<12} {:>10} {:>14.8}", "total", "", report.value);
    println!("{:<12} {:>10} {:>14.8}", "kl", "", report.kl);
    Ok(())
}

#[derive(Serialize)]
struct LossCheck {
    loss: LossKind,
    fixtures: usize,
    checked_entries: usize,
    max_rel_error: f64,
    worst: Option<serde_json::Value>,
    passed: bool,
}

pub fn grad_check(args: &GradCheckArgs) -> Result<()> {
    let kinds: Vec<LossKind> = if args.loss == "all" {
        LossKind::ALL.to_vec()
    } else {
        vec![args.loss.parse()?]
    };
    if args.fixtures == 0 {
        return Err(Error::parameter("--fixtures must be positive"));
    }
    let opts = SuiteOptions {
        fixtures: args.fixtures,
        seed: args.seed,
        check: GradCheckOptions {
            epsilon: args.eps,
            tolerance: args.tol,
            ..GradCheckOptions::default()
        },
        inject_bug: args.inject_bug,
    };
    let mut results = Vec::new();
    for kind in kinds {
        let reports = run_suite(kind, &opts)?;
        let worst = reports
            .iter()
            .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
            .expect("at least one fixture");
        results.push(LossCheck {
            loss: kind,
            fixtures: reports.len(),
            checked_entries: reports.iter().map(|r| r.report.checked).sum(),
            max_rel_error: worst.report.max_rel_error,
            worst: worst.report.worst.map(|w| {
                json!({"fixture": worst.fixture, "input": w.input, "row": w.row, "col": w.col})
            }),
            passed: reports.iter().all(|r| r.report.passed),
        });
    }
    let passed = results.iter().all(|r| r.passed);
    write_json(
        &args.out,
        &json!({"passed": passed, "eps": args.eps, "tol": args.tol, "losses": results}),
    )?;
    let mut manifest = RunManifest::new("grad-check", args, Some(args.seed))?;
    manifest.output(&args.out).write(&beside(&args.out))?;

    println!("{:<18} {:>8} {:>14}  status", "loss", "entries", "max rel err");
    for r in &results {
        println!(
            "{:<18} {:>8} {:>14.3e}  {}",
            r.loss.name(),
            r.checked_entries,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(bad) = results.iter().find(|r| !r.passed) {
        return Err(Error::numeric(format!(
            "{} gradient mismatch: max relative error {:.3e} > {:.1e} at {}",
            bad.loss.name(),
            bad.max_rel_error,
            args.tol,
            bad.worst.as_ref().map_or_else(String::new, |w| w.to_string())
        )));
    }
    Ok(())
}

fn same_within_query_order(a: &[ScoredPair], b: &[ScoredPair]) -> bool {
    let lists = |pairs: &[ScoredPair]| {
        let mut by_q: BTreeMap<String, Vec<ScoredPair>> = BTreeMap::new();
        for p in pairs {
            by_q.entry(p.query_id.clone()).or_default().push(p.clone());
        }
        by_q.into_iter()
            .map(|(q, mut l)| {
                l.sort_by(rank_order);
                (q, l.into_iter().map(|p| p.ref_id).collect::<Vec<_>>())
            })
            .collect::<BTreeMap<_, _>>()
    };
    lists(a) == lists(b)
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str, why: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::parameter(format!("{why} needs --{flag}")))
}

fn lookup<'a>(e: &'a Embeddings, id: &str, what: &str) -> Result<&'a [f64]> {
    e.ids
        .iter()
        .position(|x| x == id)
        .map(|i| e.vector(i))
        .ok_or_else(|| Error::parameter(format!("{what} id {id} has no descriptor")))
}

#[derive(Serialize)]
struct EvalReport {
    #[serde(flatten)]
    metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    raw: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    postprocess: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    within_query_order_preserved: Option<bool>,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let gt = read_ground_truth(&args.gt)?;
    let pairs = gt.label(read_scores(&args.scores)?);
    let raw = evaluate(&pairs, &gt)?;
    let mut cfg = match &args.config {
        Some(p) => PostProcessConfig::load(p)?,
        None => PostProcessConfig::default(),
    };
    let sn = &mut cfg.score_norm;
    sn.alpha = args.alpha.unwrap_or(sn.alpha);
    sn.k_start = args.k_start.unwrap_or(sn.k_start);
    sn.k_end = args.k_end.unwrap_or(sn.k_end);
    cfg.stretch.beta = args.beta.unwrap_or(cfg.stretch.beta);
    cfg.stretch.k = args.k.unwrap_or(cfg.stretch.k);

    let mut manifest = RunManifest::new("eval", args, None)?;
    manifest.input(&args.scores).input(&args.gt);
    let processed: Option<(Vec<ScoredPair>, serde_json::Value)> = if args.score_normalize {
        let qp = require(&args.queries, "queries", "score normalization")?;
        let ap = require(&args.aux, "aux", "score normalization")?;
        manifest.input(qp).input(ap);
        let queries = Embeddings::load(qp)?;
        let aux = Embeddings::load(ap)?;
        let bg = background_scores(&queries, &aux, cfg.score_norm.k_end + 1)?;
        let out = normalize_pairs(&pairs, &bg, &cfg.score_norm)?;
        Some((out, json!({"score_normalize": cfg.score_norm})))
    } else if args.stretch {
        let qp = require(&args.queries, "queries", "feature stretching")?;
        let rp = require(&args.refs, "refs", "feature stretching")?;
        let ap = require(&args.aux, "aux", "feature stretching")?;
        manifest.input(qp).input(rp).input(ap);
        let queries = Embeddings::load(qp)?;
        let refs = Embeddings::load(rp)?;
        let aux = Embeddings::load(ap)?;
        let aux_unit = aux.vectors.normalized_rows();
        let ref_unit = Embeddings::new(refs.ids.clone(), refs.vectors.normalized_rows())?;
        let mut stretched: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for p in &pairs {
            if !stretched.contains_key(&p.query_id) {
                let q = lookup(&queries, &p.query_id, "query")?;
                let qn = Matrix::from_vec(1, q.len(), q.to_vec())?.normalized_rows().into_vec();
                let bg = top_inner_products(&qn, &aux_unit, cfg.stretch.k);
                stretched.insert(p.query_id.clone(), feature_stretch(&qn, &bg, &cfg.stretch)?);
            }
        }
        let out = pairs
            .iter()
            .map(|p| {
                let r = lookup(&ref_unit, &p.ref_id, "reference")?;
                Ok(ScoredPair {
                    score: euclidean_score(&stretched[&p.query_id], r),
                    ..p.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some((out, json!({"stretch": cfg.stretch})))
    } else {
        None
    };

    let report = match processed {
        Some((out, pp)) => EvalReport {
            metrics: evaluate(&out, &gt)?,
            raw: Some(raw),
            postprocess: Some(pp),
            within_query_order_preserved: Some(same_within_query_order(&pairs, &out)),
        },
        None => EvalReport {
            metrics: raw,
            raw: None,
            postprocess: None,
            within_query_order_preserved: None,
        },
    };
    write_json(&args.out, &report)?;
    manifest.output(&args.out);
    if let Some(pp) = &report.postprocess {
        manifest.config["applied"] = pp.clone();
    }
    manifest.write(&beside(&args.out))?;

    println!("{:<8} {:>10}", "metric", "value");
    println!("{:<8} {:>10.6}", "uAP", report.metrics.uap);
    println!("{:<8} {:>10.6}", "mAP", report.metrics.map);
    println!("{:<8} {:>10.6}", "RP90", report.metrics.rp90);
    if let Some(raw) = &report.raw {
        println!("{:<8} {:>10.6}", "raw uAP", raw.uap);
    }
    Ok(())
}

fn parse_grid(spec: Option<&str>, n: usize, flag: &str) -> Result<(usize, usize)> {
    match spec {
        Some(s) => {
            let (r, c) = s
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::parameter(format!("--{flag} expects ROWSxCOLS, got {s:?}")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::parameter(format!("--{flag} expects ROWSxCOLS, got {s:?}")))
            };
            let (r, c) = (parse(r)?, parse(c)?);
            if r * c != n {
                return Err(Error::mismatch(format!("--{flag} {r}x{c} does not hold {n} tokens")));
            }
            Ok((r, c))
        }
        None => {
            let side = (n as f64).sqrt().round() as usize;
            if side * side != n {
                return Err(Error::parameter(format!("{n} tokens are not a square grid; pass --{flag}")));
            }
            Ok((side, side))
        }
    }
}

pub fn heatmap(args: &HeatmapArgs) -> Result<()> {
    let tq = load_tokens(&args.tokens_q)?;
    let tr = load_tokens(&args.tokens_r)?;
    let grid_q = parse_grid(args.grid_q.as_deref(), tq.rows(), "grid-q")?;
    let (values, grid) = match &args.probe {
        Some(probe) => {
            let grid_r = parse_grid(args.grid_r.as_deref(), tr.rows(), "grid-r")?;
            let (r, c) = probe
                .split_once(',')
                .and_then(|(r, c)| Some((r.trim().parse::<usize>().ok()?, c.trim().parse::<usize>().ok()?)))
                .ok_or_else(|| Error::parameter(format!("--probe expects ROW,COL, got {probe:?}")))?;
            if r >= grid_q.0 || c >= grid_q.1 {
                return Err(Error::parameter(format!(
                    "probe ({r}, {c}) outside the {}x{} query grid",
                    grid_q.0, grid_q.1
                )));
            }
            let p = affinity(&tq, &tr, args.tau)?;
            let row = p.row(r * grid_q.1 + c).to_vec();
            let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap_or(0);
            println!("probe ({r}, {c}) brightest cell ({}, {})", best / grid_r.1, best % grid_r.1);
            (row, grid_r)
        }
        None => {
            let h = affinity_entropy(&tq, &tr, args.tau)?;
            let mean = h.iter().sum::<f64>() / h.len() as f64;
            println!("mean affinity entropy {mean:.6}");
            (h, grid_q)
        }
    };
    let img = render_grid(&values, grid.0, grid.1, args.patch_size)?;
    img.save_png(&args.out)?;
    let mut manifest = RunManifest::new("heatmap", args, None)?;
    manifest
        .input(&args.tokens_q)
        .input(&args.tokens_r)
        .output(&args.out)
        .write(&beside(&args.out))
}
