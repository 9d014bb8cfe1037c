//! Tabular analysis of a complete study export.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use super::{
    mean, mixed_anova, paired_t, rm_anova, sample_sd, MixedAnovaResult, PairedTResult, RmAnovaResult, StatsError,
};
use crate::session::FeedbackMode;
use crate::study::{Dimension, SeriesKey, StudyMatrices, ITEM_COUNT};

/// Pairwise contrasts as `(label, a, b)`, tested on `a - b`.
pub const CONTRASTS: [(&str, FeedbackMode, FeedbackMode); 3] = [
    (
        "AI Proxy vs Explicit Feedback",
        FeedbackMode::AiProxy,
        FeedbackMode::ExplicitFeedback,
    ),
    ("AI Proxy vs AI Twin", FeedbackMode::AiProxy, FeedbackMode::AiTwin),
    (
        "Explicit Feedback vs AI Twin",
        FeedbackMode::ExplicitFeedback,
        FeedbackMode::AiTwin,
    ),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl fmt::Display for MeanSd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ({:.2})", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionRow {
    pub dimension: Dimension,
    pub means: Vec<MeanSd>,
    pub anova: Result<RmAnovaResult, StatsError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastRow {
    pub dimension: Dimension,
    pub label: &'static str,
    pub result: Result<PairedTResult, StatsError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemRow {
    pub item: u8,
    pub dimension: Dimension,
    pub means: Vec<MeanSd>,
    pub anova: Result<RmAnovaResult, StatsError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderRow {
    pub dimension: Dimension,
    pub result: Result<MixedAnovaResult, StatsError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub n: usize,
    pub dimensions: Vec<DimensionRow>,
    pub contrasts: Vec<ContrastRow>,
    pub items: Vec<ItemRow>,
    /// Subjects per order group, present when order groups were supplied.
    pub order_groups: Option<Vec<usize>>,
    pub order: Vec<OrderRow>,
}

/// `.007`, `<.001`, `1.000`.
pub fn format_p(p: f64) -> String {
    if p.is_nan() {
        "n/a".into()
    } else if p < 0.001 {
        "<.001".into()
    } else if p >= 0.9995 {
        "1.000".into()
    } else {
        format!("{p:.3}").trim_start_matches('0').to_string()
    }
}

/// Significance stars at .05 / .01 / .001.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn column(m: &[Vec<f64>], mode: FeedbackMode) -> Vec<f64> {
    m.iter().map(|r| r[mode.column()]).collect()
}

fn describe(m: &[Vec<f64>]) -> Vec<MeanSd> {
    FeedbackMode::ALL
        .iter()
        .map(|&mode| {
            let c = column(m, mode);
            MeanSd {
                mean: mean(&c),
                sd: sample_sd(&c),
            }
        })
        .collect()
}

/// RM-ANOVA per dimension, all three pairwise contrasts per dimension,
/// per-item RM-ANOVA, and the Condition × Order interaction when
/// `order_groups` maps every participant to a group.
pub fn analysis_report(
    m: &StudyMatrices,
    order_groups: Option<&BTreeMap<String, usize>>,
) -> Result<AnalysisReport, StatsError> {
    let mut dimensions = Vec::new();
    let mut contrasts = Vec::new();
    let mut order = Vec::new();

    let groups: Option<Vec<usize>> = order_groups
        .map(|g| {
            m.participants
                .iter()
                .map(|p| {
                    g.get(p)
                        .copied()
                        .ok_or_else(|| StatsError::MissingCell(format!("no order group for participant {p}")))
                })
                .collect::<Result<_, _>>()
        })
        .transpose()?;

    for dim in Dimension::ALL {
        let matrix = m
            .dimension(dim)
            .ok_or_else(|| StatsError::MissingCell(format!("no {dim} scores")))?;
        dimensions.push(DimensionRow {
            dimension: dim,
            means: describe(matrix),
            anova: rm_anova(matrix),
        });
        for (label, a, b) in CONTRASTS {
            contrasts.push(ContrastRow {
                dimension: dim,
                label,
                result: paired_t(&column(matrix, a), &column(matrix, b)),
            });
        }
        if let Some(g) = &groups {
            order.push(OrderRow {
                dimension: dim,
                result: mixed_anova(matrix, g),
            });
        }
    }

    let items = (1..=ITEM_COUNT)
        .filter_map(|i| {
            m.get(SeriesKey::Item(i)).map(|matrix| ItemRow {
                item: i,
                dimension: Dimension::of_item(i).expect("item in range"),
                means: describe(matrix),
                anova: rm_anova(matrix),
            })
        })
        .collect();

    let order_groups = groups.map(|g| {
        let k = g.iter().max().map_or(0, |&x| x + 1);
        (0..k).map(|label| g.iter().filter(|&&x| x == label).count()).collect()
    });

    Ok(AnalysisReport {
        n: m.participants.len(),
        dimensions,
        contrasts,
        items,
        order_groups,
        order,
    })
}

fn title_case(dim: Dimension) -> &'static str {
    match dim {
        Dimension::Emotional => "Emotional",
        Dimension::Cognitive => "Cognitive",
        Dimension::Behavioral => "Behavioral",
    }
}

fn df_label(df1: f64, df2: f64) -> String {
    format!("F({df1}, {df2})")
}

impl AnalysisReport {
    fn anova_df(&self) -> (f64, f64) {
        let k = FeedbackMode::ALL.len() as f64;
        (k - 1.0, (k - 1.0) * (self.n as f64 - 1.0))
    }

    /// Machine-readable form of every table:
    /// `table,dimension,item,contrast,statistic,df1,df2,p,effect`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record([
            "table",
            "dimension",
            "item",
            "contrast",
            "statistic",
            "df1",
            "df2",
            "p",
            "effect",
        ])
        .expect("in-memory CSV");
        let num = |x: f64| x.to_string();
        for row in &self.dimensions {
            let rec = match &row.anova {
                Ok(a) => vec![num(a.f), num(a.df1), num(a.df2), num(a.p), num(a.partial_eta_sq)],
                Err(_) => vec![String::new(); 5],
            };
            let mut full = vec![
                "rm_anova".to_string(),
                row.dimension.slug().into(),
                String::new(),
                String::new(),
            ];
            full.extend(rec);
            w.write_record(&full).expect("in-memory CSV");
        }
        for row in &self.contrasts {
            let rec = match &row.result {
                Ok(t) => vec![num(t.t), num(t.df), String::new(), num(t.p), num(t.d_z)],
                Err(_) => vec![String::new(); 5],
            };
            let mut full = vec![
                "paired_t".to_string(),
                row.dimension.slug().into(),
                String::new(),
                row.label.into(),
            ];
            full.extend(rec);
            w.write_record(&full).expect("in-memory CSV");
        }
        for row in &self.items {
            let rec = match &row.anova {
                Ok(a) => vec![num(a.f), num(a.df1), num(a.df2), num(a.p), num(a.partial_eta_sq)],
                Err(_) => vec![String::new(); 5],
            };
            let mut full = vec![
                "item_anova".to_string(),
                row.dimension.slug().into(),
                row.item.to_string(),
                String::new(),
            ];
            full.extend(rec);
            w.write_record(&full).expect("in-memory CSV");
        }
        for row in &self.order {
            let rec = match &row.result {
                Ok(a) => vec![num(a.interaction_f), num(a.df1), num(a.df2), num(a.p), String::new()],
                Err(_) => vec![String::new(); 5],
            };
            let mut full = vec![
                "order_interaction".to_string(),
                row.dimension.slug().into(),
                String::new(),
                String::new(),
            ];
            full.extend(rec);
            w.write_record(&full).expect("in-memory CSV");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
    }
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (df1, df2) = self.anova_df();
        let mut out = String::new();
        let modes = FeedbackMode::ALL.map(FeedbackMode::label);

        writeln!(out, "Engagement by condition: repeated-measures ANOVA (n = {})", self.n)?;
        writeln!(
            out,
            "{:<12}{:<19}{:<14}{:<14}{:>10}{:>10}{:>9}",
            "Dimension",
            modes[0],
            modes[1],
            modes[2],
            df_label(df1, df2),
            "p",
            "eta_p^2"
        )?;
        for row in &self.dimensions {
            let (fs, ps, es) = match &row.anova {
                Ok(a) => (
                    format!("{:.2}", a.f),
                    format!("{}{}", format_p(a.p), stars(a.p)),
                    format!("{:.2}", a.partial_eta_sq),
                ),
                Err(_) => ("n/a".into(), "n/a".into(), "n/a".into()),
            };
            writeln!(
                out,
                "{:<12}{:<19}{:<14}{:<14}{:>10}{:>10}{:>9}",
                title_case(row.dimension),
                row.means[0].to_string(),
                row.means[1].to_string(),
                row.means[2].to_string(),
                fs,
                ps,
                es
            )?;
        }

        writeln!(out)?;
        writeln!(
            out,
            "Pairwise comparisons: paired t, two-tailed (df = {})",
            self.n.saturating_sub(1)
        )?;
        writeln!(
            out,
            "{:<12}{:<32}{:>8}{:>10}{:>8}",
            "Dimension", "Contrast", "t", "p", "d_z"
        )?;
        for row in &self.contrasts {
            let (ts, ps, ds) = match &row.result {
                Ok(t) => (
                    format!("{:.2}", t.t),
                    format!("{}{}", format_p(t.p), stars(t.p)),
                    format!("{:.2}", t.d_z),
                ),
                Err(_) => ("n/a".into(), "n/a".into(), "n/a".into()),
            };
            writeln!(
                out,
                "{:<12}{:<32}{:>8}{:>10}{:>8}",
                title_case(row.dimension),
                row.label,
                ts,
                ps,
                ds
            )?;
        }

        if !self.items.is_empty() {
            writeln!(out)?;
            writeln!(out, "Per-item repeated-measures ANOVA (* p<.05, ** p<.01, *** p<.001)")?;
            writeln!(
                out,
                "{:<6}{:<12}{:<19}{:<14}{:<14}{:>10}",
                "Item", "Dimension", modes[0], modes[1], modes[2], "p"
            )?;
            for row in &self.items {
                let ps = match &row.anova {
                    Ok(a) => format!("{}{}", format_p(a.p), stars(a.p)),
                    Err(_) => "n/a".into(),
                };
                writeln!(
                    out,
                    "{:<6}{:<12}{:<19}{:<14}{:<14}{:>10}",
                    row.item,
                    title_case(row.dimension),
                    row.means[0].to_string(),
                    row.means[1].to_string(),
                    row.means[2].to_string(),
                    ps
                )?;
            }
        }

        if let Some(sizes) = &self.order_groups {
            writeln!(out)?;
            let sizes: Vec<String> = sizes.iter().map(usize::to_string).collect();
            writeln!(
                out,
                "Condition x Order interaction: mixed ANOVA (group sizes {})",
                sizes.join("/")
            )?;
            writeln!(out, "{:<12}{:>10}{:>8}{:>10}", "Dimension", "F", "df", "p")?;
            for row in &self.order {
                let (fs, dfs, ps) = match &row.result {
                    Ok(a) => (
                        format!("{:.2}", a.interaction_f),
                        format!("{}, {}", a.df1, a.df2),
                        format!("{}{}", format_p(a.p), stars(a.p)),
                    ),
                    Err(_) => ("n/a".into(), "n/a".into(), "n/a".into()),
                };
                writeln!(out, "{:<12}{:>10}{:>8}{:>10}", title_case(row.dimension), fs, dfs, ps)?;
            }
        }
        f.write_str(&out)
    }
}
