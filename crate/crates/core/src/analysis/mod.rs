//! Analyses over ingested verdicts, layer dumps and activation dumps.

pub mod audit;
pub mod layers;
pub mod ols;
pub mod order;
pub mod steering;

pub use audit::{
    country_selection_rates, knowledge_audit, persona_match_accuracy, selection_rate_deltas,
    Accuracy, GoldAnswer, KnowledgeAudit, PersonaAccuracy, SelectionRates,
};
pub use layers::{
    fit_country_slopes, layer_country_frequencies, layer_stereotype_frequency, layer_verdicts,
    layer_wise_kappa, read_layer_dump, CountryFrequencies, LayerDump, LayerDumpHeader,
    LayerFrequency, LayerKappa, LayerPredictionRecord, SlopeEntry, SlopeTable, StereotypeMap,
};
pub use ols::{fit_line, LinearFit};
pub use order::{incremental_consistency, CurvePoint, Direction, ResourceRanking};
pub use steering::{read_activations, steering_by_layer, steering_vector, ActivationRecord, Variant};
