//! Plain-text result tables: one row per model, one column per setting.

use std::fmt;

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub title: String,
    /// Header of the row-label column, then one per value column.
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl Table {
    pub fn new(
        title: impl Into<String>,
        label: impl Into<String>,
        columns: impl IntoIterator<Item = String>,
    ) -> Self {
        let mut cols = vec![label.into()];
        cols.extend(columns);
        Self {
            title: title.into(),
            columns: cols,
            rows: Vec::new(),
        }
    }

    /// Missing values print as `-`.
    pub fn push(&mut self, label: impl Into<String>, values: Vec<Option<f64>>) {
        self.rows.push((label.into(), values));
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(label, vals)| {
                std::iter::once(label.clone())
                    .chain(
                        vals.iter()
                            .map(|v| v.map_or("-".to_string(), |x| format!("{x:.1}"))),
                    )
                    .collect()
            })
            .collect();
        let mut widths: Vec<usize> = self.columns.iter().map(String::len).collect();
        for row in &cells {
            for (i, c) in row.iter().enumerate() {
                if i < widths.len() {
                    widths[i] = widths[i].max(c.len());
                }
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, row: &[String]| -> fmt::Result {
            for (i, c) in row.iter().enumerate() {
                let w = widths.get(i).copied().unwrap_or(c.len());
                if i == 0 {
                    write!(f, "{c:<w$}")?;
                } else {
                    write!(f, "  {c:>w$}")?;
                }
            }
            writeln!(f)
        };
        writeln!(f, "{}", self.title)?;
        line(f, &self.columns)?;
        let total: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
        writeln!(f, "{}", "-".repeat(total))?;
        for row in &cells {
            line(f, row)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_layout() {
        let mut t = Table::new("grounding", "model", ["0.5", "0.3"].map(String::from));
        t.push("upperbound", vec![Some(100.0), Some(100.0)]);
        t.push("MIL", vec![Some(95.25), None]);
        let s = t.to_string();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "grounding");
        assert_eq!(lines[1], "model         0.5    0.3");
        assert_eq!(lines[3], "upperbound  100.0  100.0");
        assert_eq!(lines[4], "MIL          95.2      -");
    }
}
