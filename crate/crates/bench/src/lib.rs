//! Shared fixtures for the criterion benchmarks.

use psychoprobe_core::gateway::{SyntheticRespondent, SyntheticRespondentConfig, WordingMode};
use psychoprobe_core::parser::{DispositionCounts, ItemRef, ResponseMatrix};
use psychoprobe_core::scales::{builtin_instruments, Instrument};
use psychoprobe_core::stats::covariance::CovarianceMatrix;

/// A synthetic response matrix over the bundled instruments.
pub fn synthetic_matrix(n_personas: usize, loading: f64, seed: u64) -> ResponseMatrix {
    let instruments = builtin_instruments();
    let residual = (1.0 - loading * loading).max(0.04).sqrt();
    let config = SyntheticRespondentConfig::from_instruments(
        &instruments,
        loading,
        residual,
        seed,
        WordingMode::BareDigit,
    );
    let respondent = SyntheticRespondent::new(config).expect("config valid");
    let items: Vec<ItemRef> = instruments
        .iter()
        .flat_map(|ins| {
            ins.items
                .iter()
                .map(move |item| ItemRef { instrument_id: ins.id.clone(), item_index: item.index })
        })
        .collect();
    let persona_ids: Vec<String> = (0..n_personas).map(|i| format!("bench-{i}")).collect();
    let cells = persona_ids
        .iter()
        .map(|persona| {
            items
                .iter()
                .map(|item| respondent.value_for(persona, &item.instrument_id, item.item_index))
                .collect()
        })
        .collect();
    ResponseMatrix {
        persona_ids,
        items,
        cells,
        provenance: "bench".into(),
        dispositions: DispositionCounts::default(),
    }
}

pub fn bundled_instruments() -> Vec<Instrument> {
    builtin_instruments()
}

/// Keyed covariance matrix of one instrument's items from a matrix.
pub fn instrument_covariance(matrix: &ResponseMatrix, instrument_id: &str) -> CovarianceMatrix {
    let instruments = builtin_instruments();
    let instrument = instruments.iter().find(|i| i.id == instrument_id).expect("bundled");
    let columns: Vec<(String, Vec<Option<f64>>)> = matrix
        .items
        .iter()
        .enumerate()
        .filter(|(_, item)| item.instrument_id == instrument_id)
        .map(|(col, item_ref)| {
            let item = instrument.item(item_ref.item_index).expect("item");
            let values = matrix
                .cells
                .iter()
                .map(|row| {
                    row[col].map(|raw| {
                        psychoprobe_core::scales::keyed_value(
                            item,
                            raw,
                            instrument.response_range,
                        )
                        .unwrap_or(raw) as f64
                    })
                })
                .collect();
            (item_ref.label(), values)
        })
        .collect();
    psychoprobe_core::stats::covariance::covariance_matrix(
        &columns,
        psychoprobe_core::stats::covariance::MissingHandling::Listwise,
    )
    .expect("covariance computes")
    .matrix
}
