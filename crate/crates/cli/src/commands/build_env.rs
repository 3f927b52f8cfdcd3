//! Case files in, validated environments out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dxdistill::environment::{extract_case, load_case};
use dxdistill::gateway::RequestContext;
use dxdistill::ClinicalEnvironment;

use super::{aux_params, create_dir, require_dir};
use crate::backends::{aux_spec, Gateway};
use crate::manifest::{ManifestBuilder, MANIFEST_FILE};
use crate::{Context, Outcome, Usage};

fn candidates(input: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(input)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let ext = path.extension().and_then(|e| e.to_str());
        if path.is_file() && name != MANIFEST_FILE && matches!(ext, Some("json" | "txt")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn run(
    ctx: &Context,
    input: &Path,
    out: &Path,
    keep_going: bool,
    extract_model: Option<&str>,
) -> anyhow::Result<Outcome> {
    require_dir(input, "input")?;
    let files = candidates(input)?;
    if files.is_empty() {
        return Err(Usage(format!("{} holds no .json or .txt cases", input.display())).into());
    }
    let extractor = match extract_model {
        Some(model) => {
            let gateway = Gateway::from_config(&ctx.config)?;
            Some((gateway.backend_for(&aux_spec("extract", model))?, model))
        }
        None => None,
    };
    create_dir(out)?;

    let mut manifest = ManifestBuilder::new("build-env", ctx.config_path.as_deref(), &ctx.config, ctx.seed, ctx.deterministic);
    manifest.input("input", input);
    manifest.set("files", files.len() as u64);
    let mut built: BTreeMap<String, (PathBuf, ClinicalEnvironment)> = BTreeMap::new();
    for path in &files {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let loaded = if path.extension().is_some_and(|e| e == "txt") {
            match &extractor {
                None => {
                    manifest.error(format!("{name}: raw case text needs --extract-model"));
                    continue;
                }
                Some((backend, model)) => std::fs::read_to_string(path)
                    .map_err(anyhow::Error::from)
                    .and_then(|raw| {
                        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                        let rc = RequestContext {
                            case_id: stem.into_owned(),
                            ..Default::default()
                        };
                        Ok(extract_case(&raw, backend.as_ref(), model, aux_params(), &rc)?)
                    }),
            }
        } else {
            load_case(path).map_err(anyhow::Error::from)
        };
        match loaded {
            Err(e) => manifest.error(format!("{name}: {e:#}")),
            Ok(env) => {
                if let Some((first, _)) = built.get(&env.case_id) {
                    manifest.error(format!(
                        "{name}: case id {:?} already defined by {}",
                        env.case_id,
                        first.file_name().unwrap_or_default().to_string_lossy()
                    ));
                    continue;
                }
                built.insert(env.case_id.clone(), (path.clone(), env));
            }
        }
    }

    for (id, (_, env)) in &built {
        let file = format!("{id}.json");
        std::fs::write(out.join(&file), env.to_pretty_json() + "\n")?;
        manifest.output(file);
    }
    manifest.set("cases", built.len() as u64);
    let failed = manifest.has_errors();
    manifest.set("failed", (files.len() - built.len()) as u64);
    manifest.write(out)?;
    log::info!("built {} of {} cases into {}", built.len(), files.len(), out.display());
    Ok(if failed && !keep_going {
        Outcome::Partial
    } else {
        Outcome::Success
    })
}
