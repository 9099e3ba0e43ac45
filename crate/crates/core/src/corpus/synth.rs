use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{normalize, ClinicalRecord};
use crate::knowledge::FactRecord;
use crate::{Error, Result};

/// Entity slots in every synthetic findings text.
pub const FINDINGS_SLOTS: usize = 4;

const SLOT_TEMPLATES: [&str; 4] = [
    "there is {sev} {ent} in the examined region",
    "the study shows {sev} {ent}",
    "{sev} {ent} is seen on this exam",
    "evidence of {sev} {ent} is noted",
];

const FILLERS: [&str; 4] = [
    "no other acute abnormality is seen",
    "the remaining structures are unremarkable",
    "heart size is within normal limits",
    "no significant interval change",
];

// Mentions with these grades are carried into the impression.
const REPORTED: [&str; 2] = ["moderate", "severe"];
const UNREPORTED: [&str; 2] = ["mild", "trace"];

/// Builds findings from slot templates filled with KB preferred names, and an
/// impression restating the moderate and severe mentions.
///
/// Each slot holds an entity with probability `entity_density`; at least one
/// slot always does, and at least one mention is always reported.
pub fn generate_synthetic_corpus(
    n_records: usize,
    kb: &[FactRecord],
    entity_density: f64,
    seed: u64,
) -> Result<Vec<ClinicalRecord>> {
    if kb.is_empty() {
        return Err(Error::InvalidInput("synthetic corpus needs a non-empty KB".into()));
    }
    if !(entity_density > 0.0 && entity_density <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "entity density must be in (0, 1], got {entity_density}"
        )));
    }
    let names: Vec<String> = kb.iter().map(|f| normalize(&f.preferred_name)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_records);

    for i in 0..n_records {
        let mut filled: Vec<bool> = (0..FINDINGS_SLOTS)
            .map(|_| rng.random_bool(entity_density))
            .collect();
        if !filled.iter().any(|&f| f) {
            let slot = rng.random_range(0..FINDINGS_SLOTS);
            filled[slot] = true;
        }

        // (slot, entity, reported)
        let mut mentions: Vec<(usize, &str, bool)> = filled
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(slot, _)| {
                let ent = names.choose(&mut rng).expect("kb is non-empty").as_str();
                (slot, ent, rng.random_bool(0.5))
            })
            .collect();
        if !mentions.iter().any(|m| m.2) {
            let k = rng.random_range(0..mentions.len());
            mentions[k].2 = true;
        }

        let mut sentences = Vec::with_capacity(FINDINGS_SLOTS);
        let mut mention_iter = mentions.iter().peekable();
        for slot in 0..FINDINGS_SLOTS {
            match mention_iter.next_if(|m| m.0 == slot) {
                Some(&(_, ent, reported)) => {
                    let grades = if reported { &REPORTED } else { &UNREPORTED };
                    let sev = grades.choose(&mut rng).expect("non-empty");
                    let template = SLOT_TEMPLATES.choose(&mut rng).expect("non-empty");
                    sentences.push(template.replace("{sev}", sev).replace("{ent}", ent));
                }
                None => sentences.push(FILLERS.choose(&mut rng).expect("non-empty").to_string()),
            }
        }
        let findings = sentences.join(". ") + ".";

        let reported: Vec<&str> = mentions.iter().filter(|m| m.2).map(|m| m.1).collect();
        let listed = match reported.as_slice() {
            [one] => one.to_string(),
            [init @ .., last] => format!("{} and {last}", init.join(", ")),
            [] => unreachable!("at least one mention is reported"),
        };
        let impression = if rng.random_bool(0.5) {
            format!("findings consistent with {listed}.")
        } else {
            let verb = if reported.len() == 1 { "is" } else { "are" };
            format!("{listed} {verb} present.")
        };

        out.push(ClinicalRecord {
            record_id: format!("syn{i:05}"),
            procedure_type: "echocardiogram".into(),
            techniques: "transthoracic".into(),
            indication: "heart failure".into(),
            findings,
            impression,
        });
    }
    Ok(out)
}

/// A small synthetic concept dictionary covering cardiopulmonary findings.
pub fn default_kb() -> Vec<FactRecord> {
    // id, name, synonyms, semantic type, definition, source
    type Row = (&'static str, &'static str, &'static [&'static str], &'static str, &'static str, &'static str);
    const ROWS: &[Row] = &[
        ("C0001", "cardiomegaly", &["enlarged heart"], "finding", "abnormal enlargement of the heart", "UMLS"),
        ("C0002", "pleural effusion", &["effusion"], "disease", "fluid collection in the pleural space", "SNOMED-CT"),
        ("C0003", "pericardial effusion", &["fluid around the heart"], "disease", "fluid collection in the pericardial sac", "SNOMED-CT"),
        ("C0004", "pulmonary edema", &["lung edema"], "disease", "fluid accumulation in lung tissue", "UMLS"),
        ("C0005", "atrial fibrillation", &["afib"], "disease", "irregular rapid atrial rhythm", "ICD-10"),
        ("C0006", "atelectasis", &[], "finding", "partial collapse of lung tissue", "UMLS"),
        ("C0007", "pneumothorax", &[], "disease", "air in the pleural space", "ICD-10"),
        ("C0008", "consolidation", &[], "finding", "airspace filled with fluid or cells", "UMLS"),
        ("C0009", "mitral regurgitation", &[], "disease", "backflow through the mitral valve", "ICD-10"),
        ("C0010", "aortic stenosis", &[], "disease", "narrowing of the aortic valve", "ICD-10"),
        ("C0011", "tricuspid regurgitation", &[], "disease", "backflow through the tricuspid valve", "ICD-10"),
        ("C0012", "left ventricular hypertrophy", &["lvh"], "finding", "thickening of the left ventricular wall", "SNOMED-CT"),
        ("C0013", "reduced ejection fraction", &["systolic dysfunction"], "finding", "weak left ventricular pumping", "SNOMED-CT"),
        ("C0014", "diastolic dysfunction", &[], "finding", "impaired ventricular relaxation", "SNOMED-CT"),
        ("C0015", "pulmonary hypertension", &[], "disease", "elevated pulmonary arterial pressure", "ICD-10"),
        ("C0016", "vascular congestion", &["pulmonary vascular congestion"], "finding", "engorged pulmonary vessels", "UMLS"),
        ("C0017", "granuloma", &[], "finding", "small nodule of chronic inflammation", "UMLS"),
        ("C0018", "scoliosis", &[], "disease", "lateral curvature of the spine", "ICD-10"),
        ("C0019", "hiatal hernia", &[], "disease", "stomach protrusion through the diaphragm", "ICD-10"),
        ("C0020", "emphysema", &[], "disease", "destruction of alveolar walls", "ICD-10"),
        ("C0021", "pulmonary nodule", &["lung nodule"], "finding", "small rounded lung opacity", "SNOMED-CT"),
        ("C0022", "interstitial edema", &[], "finding", "fluid within the lung interstitium", "UMLS"),
        ("C0023", "dilated cardiomyopathy", &[], "disease", "enlarged and weakened heart muscle", "ICD-10"),
        ("C0024", "wall motion abnormality", &[], "finding", "abnormal regional myocardial contraction", "SNOMED-CT"),
        ("C0025", "left atrial enlargement", &[], "finding", "dilation of the left atrium", "SNOMED-CT"),
        ("C0026", "right ventricular dilation", &[], "finding", "enlargement of the right ventricle", "SNOMED-CT"),
        ("C0027", "pacemaker", &["cardiac pacemaker"], "device", "implanted device regulating heart rhythm", "SNOMED-CT"),
        ("C0028", "sternotomy wires", &[], "device", "wires from prior chest surgery", "SNOMED-CT"),
        ("C0029", "rib fracture", &[], "injury", "break in a rib bone", "ICD-10"),
        ("C0030", "hyperinflation", &[], "finding", "increased lung volume", "UMLS"),
    ];
    ROWS.iter()
        .map(|&(id, name, syn, sty, def, src)| FactRecord {
            concept_id: id.into(),
            preferred_name: name.into(),
            synonyms: syn.iter().map(|s| s.to_string()).collect(),
            semantic_type: sty.into(),
            definition: def.into(),
            source: Some(src.into()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use crate::ner::{build_gazetteer, extract_entities};

    fn one_concept() -> Vec<FactRecord> {
        vec![FactRecord {
            concept_id: "C1".into(),
            preferred_name: "cardiomegaly".into(),
            synonyms: vec![],
            semantic_type: "finding".into(),
            definition: "big heart".into(),
            source: None,
        }]
    }

    #[test]
    fn single_concept_appears_in_both_fields() {
        let recs = generate_synthetic_corpus(1, &one_concept(), 1.0, 9).unwrap();
        assert!(recs[0].findings.contains("cardiomegaly"));
        assert!(recs[0].impression.contains("cardiomegaly"));
    }

    #[test]
    fn deterministic_per_seed() {
        let kb = default_kb();
        let a = generate_synthetic_corpus(100, &kb, 0.7, 4).unwrap();
        let b = generate_synthetic_corpus(100, &kb, 0.7, 4).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(a, generate_synthetic_corpus(100, &kb, 0.7, 5).unwrap());
    }

    #[test]
    fn density_controls_mentions_per_findings() {
        let kb = default_kb();
        let gaz = build_gazetteer(&kb).unwrap();
        let recs = generate_synthetic_corpus(50, &kb, 0.5, 21).unwrap();
        let total: usize = recs
            .iter()
            .map(|r| extract_entities(&r.findings, &gaz).mentions.len())
            .sum();
        let mean = total as f64 / recs.len() as f64;
        assert!((mean - 0.5 * FINDINGS_SLOTS as f64).abs() <= 1.0, "mean {mean}");
    }

    #[test]
    fn template_words_hold_no_default_kb_entities() {
        let gaz = build_gazetteer(&default_kb()).unwrap();
        for text in SLOT_TEMPLATES.iter().chain(FILLERS.iter()) {
            let cleaned = text.replace("{sev}", "").replace("{ent}", "");
            assert!(extract_entities(&cleaned, &gaz).mentions.is_empty(), "{text}");
        }
        for g in REPORTED.iter().chain(UNREPORTED.iter()) {
            assert!(gaz.concept(&tokenize(g).join(" ")).is_none());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(generate_synthetic_corpus(3, &[], 0.5, 1).is_err());
        assert!(generate_synthetic_corpus(3, &one_concept(), 0.0, 1).is_err());
        assert!(generate_synthetic_corpus(3, &one_concept(), 1.5, 1).is_err());
    }
}
