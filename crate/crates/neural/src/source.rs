use std::path::Path;
use std::sync::Arc;

use opfeat_core::expr::Expr;
use opfeat_core::fit::Dataset;
use opfeat_core::graph::AdjacencyMatrix;
use opfeat_core::pipeline::{MatrixSource, SourceError, SourceRegistry};

use crate::checkpoint;
use crate::model::Model;

/// Predicts the matrix from the data alone with a trained model.
pub struct ModelSource {
    model: Arc<Model>,
    path: String,
}

impl ModelSource {
    pub fn new(model: Model, path: impl Into<String>) -> ModelSource {
        ModelSource {
            model: Arc::new(model),
            path: path.into(),
        }
    }

    pub fn load(path: &Path) -> Result<ModelSource, SourceError> {
        let (model, _) = checkpoint::load(path).map_err(|e| SourceError::Other(format!("{}: {e}", path.display())))?;
        Ok(ModelSource::new(model, path.display().to_string()))
    }
}

impl MatrixSource for ModelSource {
    fn name(&self) -> String {
        format!("model:{}", self.path)
    }

    fn matrix(&self, _label: &Expr, data: &Dataset, _seed: u64) -> Result<AdjacencyMatrix, SourceError> {
        // an absent second variable reads as zero
        let positions: Vec<[f64; 2]> = data
            .points
            .iter()
            .map(|p| [p.first().copied().unwrap_or(0.0), p.get(1).copied().unwrap_or(0.0)])
            .collect();
        self.model
            .predict_matrix(&positions, &data.values)
            .map_err(|e| SourceError::Other(e.to_string()))
    }
}

/// Adds `model:<checkpoint path>` to `registry`.
pub fn register_model_source(registry: &mut SourceRegistry) {
    registry.register("model", |arg| {
        let path = arg.ok_or_else(|| SourceError::Argument("model needs a checkpoint path, as in model:ckpt.txt".into()))?;
        Ok(Box::new(ModelSource::load(Path::new(path))?))
    });
}
