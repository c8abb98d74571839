//! Built-in codebooks: one shaped like the MIDUS variable groupings and a
//! small configurable layout for synthetic benchmarks.

use super::{Codebook, FactorSpec, Project, VariableSpec};

/// `(factor, project, categorical count, numerical count)` in atlas index order.
///
/// Non-cognitive counts follow the published variable-group table. The ten
/// BTACT numerical variables are spread over seven cognitive factors.
pub const MIDUS_FACTORS: [(&str, Project, usize, usize); 55] = [
    ("Actigraphy", Project::Biomarkers, 128, 217),
    ("Administration", Project::Survey, 3, 3),
    ("Affect", Project::DailyDiary, 27, 0),
    ("Assay Data", Project::Biomarkers, 1, 62),
    ("Assistance", Project::DailyDiary, 52, 4),
    ("Caregiving", Project::Survey, 20, 5),
    ("Category Fluency", Project::Cognitive, 0, 1),
    ("Children", Project::Survey, 16, 8),
    ("Cognitive Battery Factor Scores", Project::Cognitive, 0, 4),
    ("Community Involvement", Project::Survey, 30, 59),
    ("Cortisol", Project::DailyDiary, 4, 4),
    ("Daily Discrimination", Project::DailyDiary, 21, 0),
    ("Daily Medications", Project::DailyDiary, 10, 0),
    ("Daily Stressors", Project::DailyDiary, 129, 14),
    ("Delayed Word List Recall", Project::Cognitive, 0, 1),
    ("Digits Backward", Project::Cognitive, 0, 1),
    ("Disability Assistance", Project::DailyDiary, 26, 2),
    ("Discrimination", Project::Survey, 21, 13),
    ("Education, Occupation, and Marital Status", Project::Survey, 71, 29),
    ("Emotional Support", Project::DailyDiary, 51, 4),
    ("Finances", Project::Survey, 34, 35),
    ("Health", Project::Survey, 231, 43),
    ("Health Behaviors", Project::DailyDiary, 2, 0),
    ("Health Insurance", Project::Survey, 42, 0),
    ("Health Questions for Women", Project::Survey, 53, 4),
    ("Household Roster and Children", Project::Survey, 256, 68),
    ("Immediate Word List Recall", Project::Cognitive, 0, 1),
    ("Life Overall", Project::Survey, 0, 6),
    ("Life Satisfaction", Project::Survey, 10, 0),
    ("Living Arrangements", Project::Survey, 11, 2),
    ("Marriage or Close Relationship", Project::Survey, 36, 21),
    ("Medical History", Project::Biomarkers, 493, 94),
    ("Medication Chart", Project::Biomarkers, 204, 81),
    ("Musculoskeletal", Project::Biomarkers, 6, 17),
    ("Number Series", Project::Cognitive, 0, 1),
    ("Parent's Health", Project::Survey, 6, 4),
    ("Personal Beliefs", Project::Survey, 310, 95),
    ("Physical Exam", Project::Biomarkers, 263, 42),
    ("Physical Symptoms", Project::DailyDiary, 56, 0),
    ("Pittsburgh Sleep Questionnaire (PSQ)", Project::Biomarkers, 22, 10),
    ("Positive Events", Project::DailyDiary, 20, 10),
    ("Psychophysiology Protocol", Project::Biomarkers, 32, 153),
    ("Race and Ethnicity", Project::Survey, 71, 0),
    ("Religion and Spirituality", Project::Survey, 48, 8),
    ("Scale Variables", Project::DailyDiary, 13, 9),
    ("Self-Administrated Questionnaire (SAQ)", Project::Biomarkers, 405, 43),
    ("Sexuality", Project::Survey, 6, 6),
    ("Social Networks", Project::Survey, 52, 7),
    ("Stop and Go Switch Task - Composite Scores", Project::Cognitive, 0, 1),
    ("Time use", Project::DailyDiary, 13, 16),
    ("Week Summary", Project::DailyDiary, 35, 0),
    ("Work", Project::Survey, 108, 31),
    ("Work Behaviors", Project::DailyDiary, 8, 0),
    ("Your Health", Project::Survey, 294, 55),
    ("Your Neighborhood", Project::Survey, 16, 4),
];

fn levels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("L{i}")).collect()
}

/// Full-size codebook with the MIDUS group counts (55 factors, 5064 variables).
///
/// Categorical variables cycle through 2..=5 levels.
pub fn midus_shaped() -> Codebook {
    let mut factors = Vec::with_capacity(MIDUS_FACTORS.len());
    let mut variables = Vec::new();
    let mut cat_serial = 0usize;
    for (fi, &(name, project, n_cat, n_num)) in MIDUS_FACTORS.iter().enumerate() {
        factors.push(FactorSpec { name: name.to_string(), project });
        for j in 0..n_cat {
            let id = format!("f{fi:02}_c{j:03}");
            variables.push(VariableSpec::categorical(&id, project, name, &levels(2 + cat_serial % 4)));
            cat_serial += 1;
        }
        for j in 0..n_num {
            let id = format!("f{fi:02}_n{j:03}");
            variables.push(VariableSpec::numerical(&id, project, name));
        }
    }
    Codebook::new(factors, variables).expect("preset codebook is valid")
}

/// Per-factor variable counts for a small synthetic codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLayout {
    pub n_factors: usize,
    pub numerical_per_factor: usize,
    pub categorical_per_factor: usize,
    pub levels_per_categorical: usize,
}

impl Default for SyntheticLayout {
    fn default() -> Self {
        SyntheticLayout {
            n_factors: 55,
            numerical_per_factor: 3,
            categorical_per_factor: 1,
            levels_per_categorical: 3,
        }
    }
}

/// Codebook with uniform per-factor layout. Factor names and projects come
/// from [`MIDUS_FACTORS`] while available, then fall back to `F<i>` in the
/// Survey project.
pub fn synthetic_codebook(layout: &SyntheticLayout) -> Codebook {
    let lv = levels(layout.levels_per_categorical.max(2));
    let mut factors = Vec::with_capacity(layout.n_factors);
    let mut variables = Vec::new();
    for fi in 0..layout.n_factors {
        let (name, project) = match MIDUS_FACTORS.get(fi) {
            Some(&(name, project, _, _)) => (name.to_string(), project),
            None => (format!("F{fi}"), Project::Survey),
        };
        for j in 0..layout.numerical_per_factor {
            variables.push(VariableSpec::numerical(&format!("f{fi:02}_n{j}"), project, &name));
        }
        for j in 0..layout.categorical_per_factor {
            variables.push(VariableSpec::categorical(&format!("f{fi:02}_c{j}"), project, &name, &lv));
        }
        factors.push(FactorSpec { name, project });
    }
    Codebook::new(factors, variables).expect("synthetic layout is valid")
}
