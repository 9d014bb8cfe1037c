//! Feedback HTML sanitizer: `<strong>` and `<br>` survive, everything else is
//! escaped.

const ALLOWED: [(&str, &str); 5] = [
    ("<strong>", "<strong>"),
    ("</strong>", "</strong>"),
    ("<br>", "<br>"),
    ("<br/>", "<br>"),
    ("<br />", "<br>"),
];

pub fn sanitize_feedback(input: &str) -> String {
    let mut out = String::with_capacity(input.len());
    let mut rest = input;
    'outer: while let Some(c) = rest.chars().next() {
        if c == '<' {
            for (tag, canonical) in ALLOWED {
                if rest.get(..tag.len()).is_some_and(|head| head.eq_ignore_ascii_case(tag)) {
                    out.push_str(canonical);
                    rest = &rest[tag.len()..];
                    continue 'outer;
                }
            }
        }
        match c {
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
        rest = &rest[c.len_utf8()..];
    }
    // Strong tags the model left open would bleed into following markup.
    let opened = out.matches("<strong>").count();
    let closed = out.matches("</strong>").count();
    for _ in closed..opened {
        out.push_str("</strong>");
    }
    out
}
