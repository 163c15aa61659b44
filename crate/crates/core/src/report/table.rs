//! Side-by-side regression tables.

use std::fmt::Write as _;

use crate::estimator::FitResult;
use crate::prepare::INTERCEPT;

use super::format::{format_coef, format_fixed3, format_se, thousands, STAR_NOTE};

pub const CONSTANT_LABEL: &str = "Constant";

fn label(name: &str) -> &str {
    if name == INTERCEPT {
        CONSTANT_LABEL
    } else {
        name
    }
}

/// Coefficient names across all fits, by first appearance, intercept last.
fn row_names(fits: &[&FitResult]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for f in fits {
        for n in &f.names {
            if n != INTERCEPT && !names.contains(n) {
                names.push(n.clone());
            }
        }
    }
    if fits.iter().any(|f| f.index_of(INTERCEPT).is_some()) {
        names.push(INTERCEPT.to_owned());
    }
    names
}

fn width(s: &str) -> usize {
    s.chars().count()
}

/// Renders fits as one column each: coefficient with stars, standard error
/// beneath in parentheses, then Observations, R² and Residual Std. Error.
pub fn render_table(fits: &[&FitResult]) -> String {
    let names = row_names(fits);
    let mut body: Vec<(String, Vec<String>)> = Vec::new();
    for name in &names {
        let (mut coefs, mut ses) = (Vec::new(), Vec::new());
        for f in fits {
            match f.index_of(name) {
                Some(i) => {
                    coefs.push(format_coef(f.coefficients[i], f.p_values[i]));
                    ses.push(format_se(f.std_errors[i]));
                }
                None => {
                    coefs.push(String::new());
                    ses.push(String::new());
                }
            }
        }
        body.push((label(name).to_owned(), coefs));
        body.push((String::new(), ses));
    }
    let stats: Vec<(String, Vec<String>)> = vec![
        (
            "Observations".into(),
            fits.iter().map(|f| thousands(f.n_obs)).collect(),
        ),
        (
            "R\u{00B2}".into(),
            fits.iter().map(|f| format_fixed3(f.r_squared)).collect(),
        ),
        (
            "Residual Std. Error".into(),
            fits.iter()
                .map(|f| format!("{} (df = {})", format_fixed3(f.residual_std_error), f.residual_df))
                .collect(),
        ),
    ];
    let outcomes: Vec<&str> = fits.iter().map(|f| f.outcome.as_str()).collect();
    let methods: Vec<&str> = fits.iter().map(|f| f.method.table_label()).collect();
    let numbers: Vec<String> = (1..=fits.len()).map(|i| format!("({i})")).collect();

    let label_w = body
        .iter()
        .chain(&stats)
        .map(|(l, _)| width(l))
        .chain([width("Note:")])
        .max()
        .unwrap_or(0)
        + 1;
    let col_w: Vec<usize> = (0..fits.len())
        .map(|j| {
            body.iter()
                .chain(&stats)
                .map(|(_, cells)| width(&cells[j]))
                .chain([width(outcomes[j]), width(methods[j]), width(&numbers[j])])
                .max()
                .unwrap_or(0)
                + 2
        })
        .collect();
    let total = label_w + col_w.iter().sum::<usize>();
    let columns_w = total - label_w;

    let mut out = String::new();
    let row = |out: &mut String, l: &str, cells: &[String]| {
        let mut line = format!("{l:<label_w$}");
        for (c, w) in cells.iter().zip(&col_w) {
            let _ = write!(line, "{c:^w$}");
        }
        out.push_str(line.trim_end());
        out.push('\n');
    };
    let rule = |out: &mut String, c: char| {
        out.extend(std::iter::repeat_n(c, total));
        out.push('\n');
    };

    rule(&mut out, '=');
    let title = format!("{:label_w$}{:^columns_w$}", "", "Dependent variable:");
    out.push_str(title.trim_end());
    out.push('\n');
    let _ = writeln!(out, "{:label_w$}{}", "", "-".repeat(columns_w));
    let dependent: Vec<String> = if outcomes.iter().all(|o| *o == outcomes[0]) {
        let mut line = format!("{:label_w$}{:^columns_w$}", "", outcomes[0]);
        line.truncate(line.trim_end().len());
        out.push_str(&line);
        out.push('\n');
        Vec::new()
    } else {
        outcomes.iter().map(|o| (*o).to_owned()).collect()
    };
    if !dependent.is_empty() {
        row(&mut out, "", &dependent);
    }
    row(&mut out, "", &methods.iter().map(|m| (*m).to_owned()).collect::<Vec<_>>());
    row(&mut out, "", &numbers);
    rule(&mut out, '-');
    for (l, cells) in &body {
        row(&mut out, l, cells);
    }
    rule(&mut out, '-');
    for (l, cells) in &stats {
        row(&mut out, l, cells);
    }
    rule(&mut out, '=');
    let _ = writeln!(out, "{:<label_w$}{:>columns_w$}", "Note:", STAR_NOTE);
    out
}

/// Long-format CSV: one line per fit and coefficient.
pub fn fits_csv(fits: &[&FitResult]) -> String {
    let mut out = String::from("column,spec,method,term,estimate,std_error,t_stat,p_value,stars\n");
    for (j, f) in fits.iter().enumerate() {
        for (i, name) in f.names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                j + 1,
                f.spec,
                f.method.table_label(),
                name,
                f.coefficients[i],
                f.std_errors[i],
                f.t_stats[i],
                f.p_values[i],
                f.stars[i]
            );
        }
    }
    out
}
