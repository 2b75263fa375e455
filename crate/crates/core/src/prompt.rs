//! Prompt assembly and batch expansion.
//!
//! A prompt has five parts in fixed order: personality instruction, persona
//! description, test instruction, item statement, item postamble. The
//! instruction and postamble texts are configuration
//! (`data/prompt_template.json` holds the defaults) because the exact wording
//! is tunable per experiment; the structure is not.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::persona::PersonaText;
use crate::scales::{Instrument, Item};

/// Per-instrument slot texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSlots {
    pub test_instruction: String,
    pub item_postamble: String,
}

/// The five-slot template. `personality_instruction` must contain the
/// `{persona}` placeholder exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub personality_instruction: String,
    pub instruments: BTreeMap<String, InstrumentSlots>,
}

impl PromptTemplate {
    pub fn builtin() -> PromptTemplate {
        serde_json::from_str(include_str!("../data/prompt_template.json"))
            .expect("bundled prompt template must parse")
    }

    pub fn load(path: &Path) -> Result<PromptTemplate, PromptError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Requested model and sampling parameters for one call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ModelConfig {
    /// Profile defaults: temperature 0 and a token cap of 50, raised to 200
    /// for models that need more room to produce a numeric answer.
    pub fn profile(model: &str) -> ModelConfig {
        let max_tokens = if model.starts_with("gpt-4") { 200 } else { 50 };
        ModelConfig { model: model.to_string(), temperature: 0.0, max_tokens }
    }
}

/// One administration unit: a single (persona, item, model) prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptJob {
    pub job_id: String,
    pub persona_id: String,
    pub instrument_id: String,
    pub item_index: u32,
    pub prompt_text: String,
    pub model_config: ModelConfig,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read template file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed template file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("personality instruction must contain the {{persona}} placeholder exactly once")]
    BadPersonaPlaceholder,
    #[error("template has no slots for instrument '{0}'")]
    MissingInstrumentSlots(String),
    #[error("template slot '{0}' is empty")]
    EmptySlot(&'static str),
    #[error("item postamble does not state the response range {low}..{high}")]
    PostambleRangeMismatch { low: i32, high: i32 },
    #[error("item {item_index} does not belong to instrument '{instrument_id}'")]
    ItemInstrumentMismatch { item_index: u32, instrument_id: String },
    #[error("persona '{0}' has empty text")]
    EmptyPersona(String),
    #[error("batch inputs must be non-empty: {0}")]
    EmptyBatchInput(&'static str),
}

/// Stable digest of everything that determines a call's outcome, used as the
/// job id and the cache key.
pub fn job_digest(prompt_text: &str, config: &ModelConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt_text.as_bytes());
    hasher.update([0x1f]);
    hasher.update(config.model.as_bytes());
    hasher.update([0x1f]);
    hasher.update(format!("{}", config.temperature).as_bytes());
    hasher.update([0x1f]);
    hasher.update(config.max_tokens.to_le_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(32);
    for b in digest.iter().take(16) {
        use std::fmt::Write;
        write!(out, "{b:02x}").unwrap();
    }
    out
}

/// Assembles the five slots in order, with the persona substituted verbatim.
pub fn assemble_prompt(
    template: &PromptTemplate,
    persona: &PersonaText,
    item: &Item,
    instrument: &Instrument,
) -> Result<String, PromptError> {
    if persona.text.trim().is_empty() {
        return Err(PromptError::EmptyPersona(persona.persona_id.clone()));
    }
    if instrument.item(item.index) != Some(item) {
        return Err(PromptError::ItemInstrumentMismatch {
            item_index: item.index,
            instrument_id: instrument.id.clone(),
        });
    }
    if template.personality_instruction.matches("{persona}").count() != 1 {
        return Err(PromptError::BadPersonaPlaceholder);
    }
    let slots = template
        .instruments
        .get(&instrument.id)
        .ok_or_else(|| PromptError::MissingInstrumentSlots(instrument.id.clone()))?;
    if template.personality_instruction.trim().is_empty() {
        return Err(PromptError::EmptySlot("personality_instruction"));
    }
    if slots.test_instruction.trim().is_empty() {
        return Err(PromptError::EmptySlot("test_instruction"));
    }
    if slots.item_postamble.trim().is_empty() {
        return Err(PromptError::EmptySlot("item_postamble"));
    }
    let range = instrument.response_range;
    if !slots.item_postamble.contains(&range.low.to_string())
        || !slots.item_postamble.contains(&range.high.to_string())
    {
        return Err(PromptError::PostambleRangeMismatch { low: range.low, high: range.high });
    }
    let opening = template.personality_instruction.replacen("{persona}", &persona.text, 1);
    Ok(format!(
        "{opening}\n\n{}\n{}\n{}",
        slots.test_instruction, item.statement, slots.item_postamble
    ))
}

/// Expands personas x instruments x model configs into jobs, in
/// (persona, instrument, item, model) order.
pub fn build_batch(
    template: &PromptTemplate,
    personas: &[PersonaText],
    instruments: &[Instrument],
    model_configs: &[ModelConfig],
) -> Result<Vec<PromptJob>, PromptError> {
    if personas.is_empty() {
        return Err(PromptError::EmptyBatchInput("personas"));
    }
    if instruments.is_empty() {
        return Err(PromptError::EmptyBatchInput("instruments"));
    }
    if model_configs.is_empty() {
        return Err(PromptError::EmptyBatchInput("model_configs"));
    }
    let mut jobs = Vec::with_capacity(
        personas.len()
            * instruments.iter().map(|i| i.items.len()).sum::<usize>()
            * model_configs.len(),
    );
    for persona in personas {
        for instrument in instruments {
            for item in &instrument.items {
                for config in model_configs {
                    let prompt_text = assemble_prompt(template, persona, item, instrument)?;
                    jobs.push(PromptJob {
                        job_id: job_digest(&prompt_text, config),
                        persona_id: persona.persona_id.clone(),
                        instrument_id: instrument.id.clone(),
                        item_index: item.index,
                        prompt_text,
                        model_config: config.clone(),
                    });
                }
            }
        }
    }
    Ok(jobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::PersonaKind;
    use crate::scales::builtin_instruments;

    fn persona(text: &str) -> PersonaText {
        PersonaText {
            persona_id: "p1".into(),
            kind: PersonaKind::Generic,
            text: text.into(),
            source_record: None,
        }
    }

    fn personas(n: usize) -> Vec<PersonaText> {
        (0..n)
            .map(|i| PersonaText {
                persona_id: format!("p{i}"),
                kind: PersonaKind::Generic,
                text: format!("I am persona number {i}. I like tests."),
                source_record: None,
            })
            .collect()
    }

    #[test]
    fn slots_appear_in_order_with_persona_verbatim() {
        let template = PromptTemplate::builtin();
        let instruments = builtin_instruments();
        let bfi = instruments.iter().find(|i| i.id == "BFI").unwrap();
        let p = persona("I am 26 years old. I live by the sea.");
        let item = bfi.item(1).unwrap();
        let text = assemble_prompt(&template, &p, item, bfi).unwrap();

        let persona_pos = text.find("I am 26 years old. I live by the sea.").unwrap();
        let instruction_pos = text.find("Evaluating the statement below").unwrap();
        let item_pos = text.find(&item.statement).unwrap();
        let postamble_pos = text.find("Respond only with a single number.").unwrap();
        assert!(persona_pos < instruction_pos);
        assert!(instruction_pos < item_pos);
        assert!(item_pos < postamble_pos);
        assert_eq!(text.matches(&item.statement as &str).count(), 1);
    }

    #[test]
    fn two_items_differ_only_in_the_statement_slot() {
        let template = PromptTemplate::builtin();
        let instruments = builtin_instruments();
        let bfi = instruments.iter().find(|i| i.id == "BFI").unwrap();
        let p = persona("I collect stamps. I am reserved.");
        let a = assemble_prompt(&template, &p, bfi.item(1).unwrap(), bfi).unwrap();
        let b = assemble_prompt(&template, &p, bfi.item(2).unwrap(), bfi).unwrap();
        assert_ne!(a, b);
        let a_swapped =
            a.replace(&bfi.item(1).unwrap().statement, &bfi.item(2).unwrap().statement);
        assert_eq!(a_swapped, b);
    }

    #[test]
    fn empty_persona_is_rejected() {
        let template = PromptTemplate::builtin();
        let instruments = builtin_instruments();
        let bfi = instruments.iter().find(|i| i.id == "BFI").unwrap();
        let p = persona("  ");
        assert!(matches!(
            assemble_prompt(&template, &p, bfi.item(1).unwrap(), bfi),
            Err(PromptError::EmptyPersona(_))
        ));
    }

    #[test]
    fn item_must_belong_to_instrument() {
        let template = PromptTemplate::builtin();
        let instruments = builtin_instruments();
        let bfi = instruments.iter().find(|i| i.id == "BFI").unwrap();
        let panas = instruments.iter().find(|i| i.id == "PANAS").unwrap();
        let p = persona("I am a persona.");
        assert!(matches!(
            assemble_prompt(&template, &p, panas.item(1).unwrap(), bfi),
            Err(PromptError::ItemInstrumentMismatch { .. })
        ));
    }

    #[test]
    fn batch_counts_match_the_design() {
        let template = PromptTemplate::builtin();
        let instruments = builtin_instruments();
        let one_model = vec![ModelConfig::profile("gpt-3.5-turbo-1106")];

        let generic = build_batch(&template, &personas(150), &instruments, &one_model).unwrap();
        assert_eq!(generic.len(), 15_600);

        let silicon = build_batch(&template, &personas(1000), &instruments, &one_model).unwrap();
        assert_eq!(silicon.len(), 104_000);

        let two_models = vec![
            ModelConfig::profile("gpt-3.5-turbo-1106"),
            ModelConfig::profile("gpt-4-1106-preview"),
        ];
        let all = build_batch(&template, &personas(1150), &instruments, &two_models).unwrap();
        assert_eq!(all.len(), 239_200);

        let mut ids: Vec<&str> = all.iter().map(|j| j.job_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 239_200, "job ids must be unique");
    }

    #[test]
    fn reassembly_is_byte_identical() {
        let template = PromptTemplate::builtin();
        let instruments = builtin_instruments();
        let model = vec![ModelConfig::profile("gpt-4-1106-preview")];
        let ps = personas(3);
        let a = build_batch(&template, &ps, &instruments, &model).unwrap();
        let b = build_batch(&template, &ps, &instruments, &model).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_profiles_set_token_caps() {
        assert_eq!(ModelConfig::profile("gpt-3.5-turbo-1106").max_tokens, 50);
        assert_eq!(ModelConfig::profile("gpt-4-1106-preview").max_tokens, 200);
        assert_eq!(ModelConfig::profile("gpt-3.5-turbo-1106").temperature, 0.0);
    }
}
