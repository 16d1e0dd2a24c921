//! Pipeline orchestration (stages, config, artifact conventions).
