#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace disagree::csv {

/// Split one RFC-4180 record. Quoted fields may contain commas and doubled
/// quotes; embedded newlines are not supported. Throws ParseError on an
/// unterminated quote.
std::vector<std::string> split_record(std::string_view line, long line_no = -1);

/// Quote a field if it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

/// Write fields joined with commas and terminated by CRLF.
void write_record(std::ostream& out, const std::vector<std::string>& fields);

/// Shortest decimal text that round-trips the double exactly.
std::string format_double(double v);

}  // namespace disagree::csv
