use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};

use semcrop::cropper::CombineWeights;
use semcrop::datasets::{load_manifest, LoadOptions};
use semcrop::evaluation::{render_table, EvalConfig, EvalProtocol, EvalReport, EvidenceDir};
use semcrop::{evaluate, ManifestKind};

use crate::{ensure_file, EngineArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Semantic,
    Aesthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    BestOfN,
    PerPair,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Ground-truth manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "semantic")]
    pub kind: KindArg,
    /// Evidence directory; defaults to `evidence/` next to the manifest.
    #[arg(long)]
    pub evidence: Option<PathBuf>,
    /// Defaults to per-pair for semantic manifests and best-of-n otherwise.
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    /// Evaluate the semantic, aesthetic and combined models instead of --wa/--ws.
    #[arg(long)]
    pub sweep: bool,
    /// Count failed items as IOU 0.
    #[arg(long)]
    pub failures_as_zero: bool,
    /// Check that every image file referenced by the manifest exists.
    #[arg(long)]
    pub check_images: bool,
    /// Output directory for reports and the summary table.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
}

pub fn report_file_name(w: CombineWeights) -> String {
    format!("report-{}-wa{}-ws{}.json", w.model_name(), w.w_a, w.w_s)
}

pub fn run(args: &EvalArgs) -> Result<Vec<(PathBuf, EvalReport)>> {
    let base = args.engine.engine_config()?;
    ensure_file(&args.manifest, "manifest")?;
    let kind = match args.kind {
        KindArg::Semantic => ManifestKind::Semantic,
        KindArg::Aesthetic => ManifestKind::Aesthetic,
    };
    let opts = LoadOptions {
        check_images: args.check_images,
        ..LoadOptions::default()
    };
    let manifest = load_manifest(&args.manifest, kind, &opts)
        .with_context(|| format!("loading manifest {}", args.manifest.display()))?;
    let evidence_root = args.evidence.clone().unwrap_or_else(|| {
        args.manifest
            .parent()
            .map(|p| p.join("evidence"))
            .unwrap_or_else(|| PathBuf::from("evidence"))
    });
    if !evidence_root.is_dir() {
        anyhow::bail!("evidence directory `{}` does not exist", evidence_root.display());
    }
    let evidence = EvidenceDir::new(evidence_root);
    let taxonomy = args.engine.load_taxonomy()?;
    let protocol = match (args.protocol, kind) {
        (Some(ProtocolArg::BestOfN), _) | (None, ManifestKind::Aesthetic) => EvalProtocol::BestOfN,
        (Some(ProtocolArg::PerPair), _) | (None, ManifestKind::Semantic) => EvalProtocol::PerPair,
    };
    let weights = if args.sweep {
        vec![CombineWeights::SEMANTIC, CombineWeights::AESTHETIC, CombineWeights::COMBINED]
    } else {
        vec![base.weights]
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut out = Vec::new();
    for w in weights {
        let mut engine = base.clone();
        engine.weights = w;
        let cfg = EvalConfig {
            engine,
            protocol,
            failures_as_zero: args.failures_as_zero,
        };
        let report = evaluate(&manifest, &evidence, Some(&taxonomy), &cfg);
        for f in &report.failures {
            eprintln!(
                "warning: {}{}: {}",
                f.id,
                f.entity.as_deref().map(|e| format!("/{e}")).unwrap_or_default(),
                f.message
            );
        }
        let path = args.out.join(report_file_name(w));
        std::fs::write(&path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
        out.push((path, report));
    }
    let reports: Vec<EvalReport> = out.iter().map(|(_, r)| r.clone()).collect();
    let table = render_table(&reports);
    std::fs::write(args.out.join("table.md"), &table)?;
    print!("{table}");
    Ok(out)
}
