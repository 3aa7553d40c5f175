#pragma once

// Minimal CSV reader/writer. Handles quoted fields with embedded commas,
// quotes and newlines; all manifests and reports in this project are CSV.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "trainext/common.hpp"

namespace trainext::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  // 1-based line number of each row in the source file, for error messages
  std::vector<std::size_t> line_numbers;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline std::vector<std::string> parse_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c == '\r') {
      // tolerate CRLF
    } else {
      cur.push_back(c);
    }
  }
  if (in_quotes)
    throw ParseError("csv line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(cur);
  return fields;
}

inline Table read(std::istream& in, const std::string& what = "csv") {
  Table t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    auto fields = parse_line(line, line_no);
    if (t.header.empty()) {
      t.header = std::move(fields);
    } else {
      if (fields.size() != t.header.size())
        throw ParseError(what + " line " + std::to_string(line_no) + ": expected " +
                         std::to_string(t.header.size()) + " fields, got " +
                         std::to_string(fields.size()));
      t.rows.push_back(std::move(fields));
      t.line_numbers.push_back(line_no);
    }
  }
  if (t.header.empty()) throw ParseError(what + ": missing header row");
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return read(in, path);
}

inline std::string escape(const std::string& field) {
  bool needs_quotes = false;
  for (char c : field)
    if (c == ',' || c == '"' || c == '\n' || c == '\r') {
      needs_quotes = true;
      break;
    }
  if (!needs_quotes) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

inline void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << escape(fields[i]);
  }
  out << '\n';
}

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path) {
    if (!out_) throw Error("cannot write " + path);
  }
  void row(const std::vector<std::string>& fields) { write_row(out_, fields); }

 private:
  std::ofstream out_;
};

}  // namespace trainext::csv
