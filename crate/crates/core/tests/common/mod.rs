use std::path::PathBuf;
use std::sync::OnceLock;

use midi_draw_core::dataset::{generate_dataset, MelodyDataset, PitchVocabulary};
use midi_draw_core::model::{load_checkpoint, save_checkpoint, train, Hyperparams, ModelParams};

pub fn default_corpus() -> &'static MelodyDataset {
    static CORPUS: OnceLock<MelodyDataset> = OnceLock::new();
    CORPUS.get_or_init(|| generate_dataset(PitchVocabulary::default(), 2.0, 5000, 42).unwrap())
}

/// Default hyperparameters trained on the full default corpus. The result
/// is cached under the target directory; delete it to retrain.
pub fn reference() -> &'static ModelParams {
    static PARAMS: OnceLock<ModelParams> = OnceLock::new();
    PARAMS.get_or_init(|| {
        let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("reference-corpus42-seed0.ckpt");
        if let Ok(p) = load_checkpoint(&path) {
            return p;
        }
        let (p, _) = train(default_corpus(), &Hyperparams::default()).unwrap();
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        save_checkpoint(&p, &tmp).unwrap();
        std::fs::rename(&tmp, &path).unwrap();
        p
    })
}
