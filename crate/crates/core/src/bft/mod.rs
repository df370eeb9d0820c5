//! Adaptive BFT protocol selection and KPI prediction.

pub mod dcc;
pub mod select;

pub use dcc::{
    base_predict, dcc_step, predict, residual, DccError, DccOutput, DccParams, DccState, KpiResidual, KpiStream,
    StreamStep,
};
pub use select::{
    choose, kci_filter, kpi_score, select, Evaluation, KpiDirection, Preferences, ProtocolCatalog, ProtocolProfile,
    SelectError,
};
