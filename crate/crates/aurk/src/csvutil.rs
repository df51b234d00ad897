//! Minimal CSV helpers: comma-separated fields with double-quote quoting.

/// Split one CSV line. Quoted fields may contain commas; `""` inside a
/// quoted field is an escaped quote.
pub fn split_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted => {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    cur.push('"');
                } else {
                    quoted = false;
                }
            }
            '"' if cur.is_empty() => quoted = true,
            ',' if !quoted => {
                fields.push(std::mem::take(&mut cur));
            }
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

/// Quote a field when it contains a comma or quote.
pub fn quote_field(field: &str) -> String {
    if field.contains(',') || field.contains('"') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_quoted_commas() {
        let fields = split_line("1,\"(a, b)\",x");
        assert_eq!(fields, vec!["1", "(a, b)", "x"]);
    }

    #[test]
    fn quote_round_trip() {
        let raw = "(30.4, 58.1), \"q\"";
        let line = format!("a,{},b", quote_field(raw));
        let fields = split_line(&line);
        assert_eq!(fields, vec!["a", raw, "b"]);
    }
}
