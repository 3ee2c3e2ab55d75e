#pragma once

// Comma-separated output with a header row, LF line endings and 17
// significant digits so that reruns can be compared byte for byte.

#include <initializer_list>
#include <ostream>
#include <string>
#include <vector>

namespace dcem::csv {

std::string format_number(double v);

class Writer {
 public:
  Writer(std::ostream& out, std::vector<std::string> header);
  void row(std::initializer_list<double> values);
  void row(const std::vector<double>& values);
  void row_strings(const std::vector<std::string>& cells);

 private:
  std::ostream& out_;
  std::size_t columns_;
};

}  // namespace dcem::csv
