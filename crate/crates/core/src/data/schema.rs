//! Column layout shared by the CSV reader, the writer and the generator.

use crate::domain::AgeBracket;

/// Model features in storage order.
pub const FEATURE_COLUMNS: [&str; 23] = [
    "dem_female",
    "dem_age_band_18-24_tm1",
    "dem_age_band_25-34_tm1",
    "dem_age_band_35-44_tm1",
    "dem_age_band_45-54_tm1",
    "dem_age_band_55-64_tm1",
    "dem_age_band_65-74_tm1",
    "dem_age_band_75+_tm1",
    "hypertension_elixhauser_tm1",
    "cost_dialysis_tm1",
    "cost_emergency_tm1",
    "cost_home_health_tm1",
    "cost_ip_medical_tm1",
    "cost_ip_surgical_tm1",
    "cost_laboratory_tm1",
    "cost_op_primary_care_tm1",
    "cost_op_specialists_tm1",
    "cost_op_surgery_tm1",
    "cost_other_tm1",
    "cost_pharmacy_tm1",
    "cost_physical_therapy_tm1",
    "cost_radiology_tm1",
    "gagne_sum_tm1",
];

pub const RACE_COLUMN: &str = "race";
/// Active chronic illnesses in the outcome year; defines qualification.
pub const OUTCOME_COLUMN: &str = "gagne_sum_t";

pub const FEMALE: usize = 0;
pub const AGE_BAND_START: usize = 1;
pub const HYPERTENSION: usize = 8;
pub const COST_START: usize = 9;
pub const N_COSTS: usize = 13;
pub const PRIOR_ILLNESSES: usize = 22;
pub const N_FEATURES: usize = FEATURE_COLUMNS.len();

pub fn cost_columns() -> std::ops::Range<usize> {
    COST_START..COST_START + N_COSTS
}

pub fn age_band_column(bracket: AgeBracket) -> usize {
    AGE_BAND_START + bracket.index()
}
