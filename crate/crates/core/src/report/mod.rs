//! Regression tables, number formatting and SVG charts.

mod format;
mod svg;
mod table;

pub use format::{
    format_coef, format_fixed3, format_number, format_se, parse_formatted, stars, thousands,
    typographic, MINUS, SCIENTIFIC_BELOW, STAR_NOTE,
};
pub use svg::{class_color, forest_svg, grouped_bars_svg, Bar, ForestRow, HEIGHT, WIDTH};
pub use table::{fits_csv, render_table, CONSTANT_LABEL};
