//! Chat backends built from the run config.

use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use dxdistill::gateway::{
    BackendConfig, ChatBackend, HttpBackend, InFlightLimit, ScriptedBackend, TeacherSpec, UreqTransport, API_BASE_ENV,
};
use dxdistill::RunConfig;

use crate::Usage;

/// Hands out one backend per model spec. Scripted runs share a single
/// script; HTTP runs share one in-flight limit across all models.
pub enum Gateway {
    Scripted(Arc<ScriptedBackend>),
    Http {
        config: BackendConfig,
        limit: Arc<InFlightLimit>,
    },
}

impl Gateway {
    pub fn from_config(config: &RunConfig) -> anyhow::Result<Self> {
        match &config.backend {
            None => Err(Usage("the run config names no backend (set \"backend\")".into()).into()),
            Some(BackendConfig::Scripted { script }) => {
                let backend = ScriptedBackend::load(script)
                    .with_context(|| format!("loading script {}", script.display()))?;
                Ok(Gateway::Scripted(Arc::new(backend)))
            }
            Some(http @ BackendConfig::Http { max_in_flight, .. }) => Ok(Gateway::Http {
                config: http.clone(),
                limit: Arc::new(InFlightLimit::new(*max_in_flight)),
            }),
        }
    }

    pub fn backend_for(&self, spec: &TeacherSpec) -> anyhow::Result<Arc<dyn ChatBackend>> {
        match self {
            Gateway::Scripted(s) => Ok(s.clone()),
            Gateway::Http { config, limit } => {
                let BackendConfig::Http {
                    retry, timeout_secs, ..
                } = config
                else {
                    unreachable!("http gateway holds an http config")
                };
                let url = spec.resolve_url().ok_or_else(|| {
                    Usage(format!(
                        "model {:?} has no endpoint and {API_BASE_ENV} is not set",
                        spec.label
                    ))
                })?;
                let key = std::env::var(&spec.auth).ok();
                let transport = UreqTransport::new(Duration::from_secs(*timeout_secs));
                Ok(Arc::new(
                    HttpBackend::new(url, key, *retry, transport).with_limit(limit.clone()),
                ))
            }
        }
    }
}

/// A model spec for auxiliary calls (oracle, judge, extraction).
pub fn aux_spec(label: &str, model_id: &str) -> TeacherSpec {
    TeacherSpec {
        model_id: model_id.to_owned(),
        ..TeacherSpec::scripted(label)
    }
}
