//! Byte-stable JSON: object keys sorted, floats with six decimals.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};
use serde_json::Serializer;

struct SixDecimals<F>(F);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, writer: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(writer $(, $arg)*)
            }
        )*
    };
}

impl<F: Formatter> Formatter for SixDecimals<F> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        // `{:.6}` rounds exact ties to even.
        write!(writer, "{value:.6}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        end_object_key(),
        begin_object_value(),
        end_object_value(),
    );
}

fn write<F: Formatter>(value: &impl Serialize, formatter: F) -> String {
    // Round-tripping through `Value` sorts every object's keys.
    let tree = serde_json::to_value(value).expect("serializable to JSON");
    let mut out = Vec::new();
    let mut ser = Serializer::with_formatter(&mut out, SixDecimals(formatter));
    tree.serialize(&mut ser)
        .expect("writing to memory cannot fail");
    String::from_utf8(out).expect("JSON is UTF-8")
}

/// Single-line form, used for JSON-lines records.
pub fn to_canonical_line(value: &impl Serialize) -> String {
    write(value, CompactFormatter)
}

/// Indented form, used for standalone files.
pub fn to_canonical_json(value: &impl Serialize) -> String {
    write(value, PrettyFormatter::with_indent(b"  "))
}
