//! File ingestion, baseline matrix completion, domestic-flow construction
//! and the synthetic gravity-data generator.

mod completion;
mod domestic;
mod files;
mod synthetic;

pub use completion::{complete_matrix, CompletionReport};
pub use domestic::{build_domestic_flows, DomesticFlows, DomesticShortfall, GdpRow};
pub use files::{
    read_agreements, read_flows, read_gdp, read_regimes, write_agreements, write_flows, write_gdp, write_regimes,
    FlowTable,
};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData, SyntheticTruth};
