use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use kgx_core::adapters::{import_libkge, import_pykeen, AdapterMeta};
use kgx_core::analysis::{compare_systems, single_analysis, AnalysisError};
use kgx_core::bucketizer::{available_features, load_symmetric_relations, BucketError, FeatureSpec, Resources, TrainingGraph, TypeMap};
use kgx_core::confidence::{CiConfig, CiMethod};
use kgx_core::data::{generate_synthetic, load_tsv, Split, SyntheticConfig};
use kgx_core::metrics::aggregate;
use kgx_core::sysout::parse_system_output;
use kgx_core::{GraphStats, Metric, SingleAnalysisReport, SystemOutput, TripleSet, Vocabulary};
use kgx_kge::eval::known_triples;
use kgx_kge::{
    evaluate_to_system_output, load_model, run_debug_session, save_model, train as train_model, DebugConfig, EvalOptions, KgeError, Round,
    TrainConfig,
};
use kgx_server::Store;

use crate::{CiArgs, CompareArgs, DebugArgs, EvalArgs, Failure, Format, IngestArgs, PredictArgs, ResourceArgs, ServeArgs, SynthArgs, SysoutArgs, TrainArgs};

fn data_err(path: &Path) -> impl FnOnce(&dyn Display) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| data_err(path)(&e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Internal(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::Internal(format!("{}: {e}", path.display())))
}

fn write_report(path: &Path, json: String) -> Result<(), Failure> {
    write_file(path, format!("{json}\n").as_bytes())
}

fn kge_failure(e: KgeError) -> Failure {
    match e {
        KgeError::InvalidConfig(_) => Failure::Usage(e.to_string()),
        KgeError::Io(_) => Failure::Internal(e.to_string()),
        _ => Failure::Data(e.to_string()),
    }
}

fn analysis_failure(e: AnalysisError) -> Failure {
    match e {
        AnalysisError::Bucket(BucketError::MissingResource { .. } | BucketError::UnknownFeature(_)) | AnalysisError::Ci(_) | AnalysisError::Metric(_) => {
            Failure::Usage(e.to_string())
        }
        _ => Failure::Data(e.to_string()),
    }
}

/// Reads a system output in any supported format.
pub fn load_sysout(a: &SysoutArgs) -> Result<SystemOutput, Failure> {
    let src = open(&a.sysout)?;
    let meta = || AdapterMeta {
        system_name: a
            .system_name
            .clone()
            .unwrap_or_else(|| a.sysout.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "system".into())),
        dataset_name: a.dataset_name.clone().unwrap_or_else(|| "dataset".into()),
        rank_basis: a.rank_basis,
    };
    match a.format {
        Format::Native => {
            if a.system_name.is_some() || a.dataset_name.is_some() {
                return Err(Failure::Usage("--system-name and --dataset-name apply to dump formats only".into()));
            }
            parse_system_output(src).map_err(|e| data_err(&a.sysout)(&e))
        }
        Format::Pykeen => import_pykeen(src, &meta()).map_err(|e| data_err(&a.sysout)(&e)),
        Format::Libkge => import_libkge(src, &meta()).map_err(|e| data_err(&a.sysout)(&e)),
    }
}

fn load_split(path: &Path, split: Split, vocab: &mut Vocabulary) -> Result<TripleSet, Failure> {
    let loaded = load_tsv(open(path)?, split, vocab).map_err(|e| data_err(path)(&e))?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(loaded.set)
}

/// Loads a split against a fixed vocabulary, rejecting unseen labels.
fn load_known_split(path: &Path, split: Split, vocab: &Vocabulary) -> Result<TripleSet, Failure> {
    let mut v = vocab.clone();
    let set = load_split(path, split, &mut v)?;
    let unknown: Vec<&str> = v.entity_labels()[vocab.num_entities()..]
        .iter()
        .chain(&v.relation_labels()[vocab.num_relations()..])
        .map(String::as_str)
        .take(5)
        .collect();
    if !unknown.is_empty() {
        return Err(Failure::Data(format!("{}: labels unknown to the model: {}", path.display(), unknown.join(", "))));
    }
    Ok(set)
}

/// Loads the optional bucketing resources; the second value fingerprints their bytes.
pub fn load_resources(a: &ResourceArgs) -> Result<(Resources, String), Failure> {
    let mut res = Resources::default();
    let mut fingerprint = Vec::new();
    if let Some(p) = &a.train {
        let mut vocab = Vocabulary::new();
        let train = load_split(p, Split::Train, &mut vocab)?;
        let stats = GraphStats::compute(&train, &vocab).map_err(|e| data_err(p)(&e))?;
        res.graph = Some(TrainingGraph { vocab, stats });
    }
    if let Some(p) = &a.symmetric {
        res.symmetric = Some(load_symmetric_relations(open(p)?).map_err(|e| data_err(p)(&e))?);
    }
    if let Some(p) = &a.type_map {
        res.type_map = Some(TypeMap::load(open(p)?).map_err(|e| data_err(p)(&e))?);
    }
    for (name, p) in [("train", &a.train), ("symmetric", &a.symmetric), ("type-map", &a.type_map)] {
        if let Some(p) = p {
            let bytes = fs::read(p).map_err(|e| data_err(p)(&e))?;
            fingerprint.extend_from_slice(format!("{name}:{}\n", bytes.len()).as_bytes());
            fingerprint.extend_from_slice(&bytes);
        }
    }
    Ok((res, kgx_server::store::content_id(&fingerprint)))
}

fn ci_config(a: &CiArgs) -> Result<Option<CiConfig>, Failure> {
    if a.ci == "none" {
        return Ok(None);
    }
    let method: CiMethod = a.ci.parse().map_err(|e| Failure::Usage(format!("--ci: {e}")))?;
    let d = CiConfig::default();
    let cfg = CiConfig {
        method,
        level: a.ci_level.unwrap_or(d.level),
        resamples: a.ci_resamples.unwrap_or(d.resamples),
        seed: a.ci_seed.unwrap_or(d.seed),
        min_bucket_size: a.ci_min_bucket.unwrap_or(d.min_bucket_size),
    };
    cfg.validate().map_err(|e| Failure::Usage(format!("--ci: {e}")))?;
    Ok(Some(cfg))
}

fn fmt_value(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else {
        format!("{x:.4}")
    }
}

pub fn ingest(a: IngestArgs) -> Result<(), Failure> {
    if a.out.is_none() && a.store.is_none() {
        return Err(Failure::Usage("ingest needs --out, --store or both".into()));
    }
    let s = load_sysout(&a.input)?;
    println!("{} on {}: {} records ({})", s.header.system_name, s.header.dataset_name, s.len(), s.header.rank_basis);
    if let Some(out) = &a.out {
        let bytes = s.to_bytes().map_err(|e| Failure::Data(e.to_string()))?;
        write_file(out, &bytes)?;
        println!("wrote {}", out.display());
    }
    if let Some(root) = &a.store {
        let store = Store::open(root).map_err(|e| Failure::Internal(e.to_string()))?;
        let (id, created) = store.put(&s).map_err(|e| Failure::Data(e.to_string()))?;
        println!("{} {id}", if created { "stored" } else { "already stored" });
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let s = load_sysout(&a.input)?;
    let (res, _) = load_resources(&a.resources)?;
    let features = match &a.features {
        Some(list) => FeatureSpec::parse_list(list),
        None => available_features(&s, &res),
    };
    let metrics = match &a.metric {
        Some(list) => Metric::parse_list(list).map_err(|e| Failure::Usage(format!("--metric: {e}")))?,
        None => Metric::defaults(),
    };
    let ci = ci_config(&a.ci)?;
    let report = single_analysis(&s, &features, &metrics, ci.as_ref(), &res).map_err(analysis_failure)?;
    write_report(&a.report, report.to_json())?;
    print_single(&report);
    Ok(())
}

fn print_single(r: &SingleAnalysisReport) {
    let head = r.metrics.first().copied().unwrap_or(Metric::Mrr);
    println!("{} on {}: {} records", r.system_name, r.dataset_name, r.n_records);
    let overall: Vec<String> = r.metrics.iter().map(|m| format!("{m} {}", fmt_value(r.overall.values[m]))).collect();
    println!("  overall  {}", overall.join("  "));
    for (feature, buckets) in &r.features {
        println!("  {feature}");
        for b in buckets {
            let ci = match b.intervals.get(&head).copied().flatten() {
                Some(iv) => format!(" [{}, {}]", fmt_value(iv.lo), fmt_value(iv.hi)),
                None => String::new(),
            };
            println!("    {:<24} n={:<6} {head} {}{ci}", b.bucket, b.n, fmt_value(b.values[&head]));
        }
    }
}

pub fn compare(a: CompareArgs) -> Result<(), Failure> {
    let reports = a
        .reports
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| data_err(p)(&e))?;
            serde_json::from_slice::<SingleAnalysisReport>(&bytes).map_err(|e| data_err(p)(&e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cmp = compare_systems(&reports, a.metric).map_err(analysis_failure)?;
    if let Some(out) = &a.out {
        write_report(out, cmp.to_json())?;
    }
    println!("{} systems on {}, metric {}", cmp.systems.len(), cmp.dataset_name, cmp.metric);
    for name in &cmp.systems {
        let c = &cmp.per_system[name];
        println!(
            "  {:<24} overall {} (rank {})  b_eq {}  b_neq {}",
            name,
            fmt_value(cmp.overall[name]),
            cmp.overall_ranking[name],
            fmt_value(c.b_eq),
            fmt_value(c.b_neq)
        );
    }
    let flips = cmp.flips();
    println!("  {} of {} buckets rank the systems differently from overall", flips.len(), cmp.buckets.len());
    for b in flips {
        let order: Vec<String> = b.ranking.iter().map(|(n, r)| format!("{n}={r}")).collect();
        println!("    {}={}: {}", b.feature, b.bucket, order.join(" "));
    }
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<(), Failure> {
    let (res, tag) = load_resources(&a.resources)?;
    let store = Store::open(&a.store).map_err(|e| Failure::Internal(e.to_string()))?.with_resources(res, tag);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Internal(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .map_err(|e| Failure::Usage(format!("--addr {}: {e}", a.addr)))?;
        let addr = listener.local_addr().map_err(|e| Failure::Internal(e.to_string()))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        kgx_server::serve(Arc::new(store), listener, shutdown)
            .await
            .map_err(|e| Failure::Internal(e.to_string()))
    })
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut vocab = Vocabulary::new();
    let train = load_split(&a.train, Split::Train, &mut vocab)?;
    for (p, split) in [(&a.valid, Split::Valid), (&a.test, Split::Test)] {
        if let Some(p) = p {
            load_split(p, split, &mut vocab)?;
        }
    }
    let cfg = TrainConfig {
        model: a.kind,
        dim: a.dim,
        epochs: a.epochs,
        batch_size: a.batch_size,
        negatives: a.negatives,
        learning_rate: a.lr,
        optimizer: a.optimizer,
        loss: a.loss,
        margin: a.margin,
        seed: a.seed,
    };
    let (model, log) = train_model(&cfg, &vocab, &train).map_err(kge_failure)?;
    save_model(&model, &a.model).map_err(kge_failure)?;
    if let Some(p) = &a.log {
        write_report(p, serde_json::to_string_pretty(&log).map_err(|e| Failure::Internal(e.to_string()))?)?;
    }
    println!(
        "trained {} (dim {}) on {} triples for {} epochs, final loss {}",
        cfg.model,
        cfg.dim,
        train.len(),
        cfg.epochs,
        log.epoch_losses.last().map_or("-".into(), |l| format!("{l:.5}"))
    );
    println!("wrote {}", a.model.display());
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<(), Failure> {
    let model = load_model(&a.model).map_err(|e| data_err(&a.model)(&e))?;
    let test = load_known_split(&a.test, Split::Test, &model.vocab)?;
    let filter = if a.raw {
        if a.train.is_some() || a.valid.is_some() {
            return Err(Failure::Usage("--raw ranks ignore --train and --valid".into()));
        }
        None
    } else {
        let mut sets = vec![test.clone()];
        if let Some(p) = &a.train {
            sets.push(load_known_split(p, Split::Train, &model.vocab)?);
        }
        if let Some(p) = &a.valid {
            sets.push(load_known_split(p, Split::Valid, &model.vocab)?);
        }
        Some(known_triples(&sets))
    };
    let opts = EvalOptions {
        directions: a.directions,
        tie: a.tie,
        top_k: a.top_k,
        system_name: a
            .system_name
            .clone()
            .unwrap_or_else(|| a.model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())),
        dataset_name: a.dataset_name.clone(),
    };
    let s = evaluate_to_system_output(&model, &test, filter.as_ref(), &opts).map_err(kge_failure)?;
    let bytes = s.to_bytes().map_err(|e| Failure::Internal(e.to_string()))?;
    write_file(&a.out, &bytes)?;
    let ranks = s.ranks();
    let value = |m| aggregate(m, &ranks).map(fmt_value).unwrap_or_else(|_| "-".into());
    println!(
        "{}: {} records ({}), mrr {}  hits@10 {}",
        s.header.system_name,
        s.len(),
        s.header.rank_basis,
        value(Metric::Mrr),
        value(Metric::Hits(10))
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn debug(a: DebugArgs) -> Result<(), Failure> {
    let model = load_model(&a.model).map_err(|e| data_err(&a.model)(&e))?;
    let train = load_known_split(&a.train, Split::Train, &model.vocab)?;
    let test = load_known_split(&a.test, Split::Test, &model.vocab)?;
    let valid = a.valid.as_deref().map(|p| load_known_split(p, Split::Valid, &model.vocab)).transpose()?;
    let relation = match &a.relation {
        Some(label) => Some(
            model
                .vocab
                .relation_id(label)
                .ok_or_else(|| Failure::Data(format!("--relation: '{label}' is not a relation of the model")))?,
        ),
        None => None,
    };
    let cfg = DebugConfig {
        debug_set_size: a.debug_set_size,
        in_danger_size: a.in_danger_size,
        learning_rate: a.lr,
        epoch_cap: a.epoch_cap,
        loss: a.loss,
        seed: a.seed,
        ..DebugConfig::default()
    };
    let mut hook = |round: Round, _: &kgx_kge::KgeModel| log::info!("fine-tuning round {round:?}");
    let mut session = run_debug_session(&model, &train, valid.as_ref(), &test, relation, &cfg, &mut hook).map_err(kge_failure)?;
    session.report.saved_strategy = Some(a.strategy);
    write_report(&a.report, session.report.to_json())?;
    if let Some(p) = &a.out_model {
        save_model(session.model(a.strategy), p).map_err(kge_failure)?;
    }
    if let Some(dir) = &a.outputs {
        for (variant, s) in &session.outputs {
            let bytes = s.to_bytes().map_err(|e| Failure::Internal(e.to_string()))?;
            write_file(&dir.join(format!("{variant}.jsonl")), &bytes)?;
        }
    }
    let r = &session.report;
    println!(
        "relation {}: debug set {}, debugging test {}, in-danger set {} (scanned {})",
        r.relation,
        r.debug_set.len(),
        r.debug_test_size,
        r.in_danger_set.len(),
        r.in_danger_scanned
    );
    println!(
        "  naive: {} after {} epochs; in-danger: {} after {} epochs",
        if r.naive.converged { "converged" } else { "not converged" },
        r.naive.epochs,
        if r.in_danger.converged { "converged" } else { "not converged" },
        r.in_danger.epochs
    );
    for (variant, splits) in &r.results {
        let cells: Vec<String> = splits
            .iter()
            .map(|(split, m)| format!("{split} hits@1 {} mrr {}", fmt_value(m[&Metric::Hits(1)]), fmt_value(m[&Metric::Mrr])))
            .collect();
        println!("  {variant:<10} {}", cells.join("  "));
    }
    println!("wrote {}", a.report.display());
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    let cfg = SyntheticConfig {
        n_entities: a.entities,
        n_relations: a.relations,
        n_triples: a.triples,
        symmetric_fraction: a.symmetric_fraction,
        seed: a.seed,
    };
    let d = generate_synthetic(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    for (name, set) in [("train", &d.train), ("valid", &d.valid), ("test", &d.test)] {
        let mut buf = Vec::new();
        set.write_tsv(&d.vocab, &mut buf).map_err(|e| Failure::Internal(e.to_string()))?;
        write_file(&a.out.join(format!("{name}.tsv")), &buf)?;
    }
    let symmetric: BTreeSet<String> = d.symmetric_labels().into_iter().collect();
    let text: String = symmetric.iter().map(|l| format!("{l}\n")).collect();
    write_file(&a.out.join("symmetric.txt"), text.as_bytes())?;
    println!(
        "{} entities, {} relations ({} symmetric): train {}, valid {}, test {}",
        d.vocab.num_entities(),
        d.vocab.num_relations(),
        symmetric.len(),
        d.train.len(),
        d.valid.len(),
        d.test.len()
    );
    println!("wrote {}", a.out.display());
    Ok(())
}
