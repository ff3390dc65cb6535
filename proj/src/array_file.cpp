#include "affplan/array_file.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace affplan {

const std::string* ArrayFile::find_meta(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return &v;
  }
  return nullptr;
}

const std::string& ArrayFile::require_meta(const std::string& key) const {
  if (const auto* v = find_meta(key)) return *v;
  throw ConfigError("array file is missing meta key '" + key + "'");
}

const ArrayFile::Array* ArrayFile::find_array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const ArrayFile::Array& ArrayFile::require_array(const std::string& name) const {
  if (const auto* a = find_array(name)) return *a;
  throw ConfigError("array file is missing array '" + name + "'");
}

void write_array_file(const std::filesystem::path& path, const ArrayFile& file) {
  std::ostringstream header;
  header << "AFFPLAN-ARRAYS\n";
  header << "kind " << file.kind << "\n";
  header << "version " << file.version << "\n";
  header << "seed " << file.seed << "\n";
  for (const auto& [k, v] : file.meta) {
    if (k.find_first_of(" \t\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ConfigError("meta entries must be single-line with a space-free key: '" + k + "'");
    }
    header << "meta " << k << " " << v << "\n";
  }
  std::size_t offset = 0;
  for (const auto& a : file.arrays) {
    if (a.values.size() != a.rows * a.cols) throw ConfigError("array '" + a.name + "' has inconsistent shape");
    header << "array " << a.name << " " << a.rows << " " << a.cols << " " << offset << "\n";
    offset += a.values.size() * sizeof(float);
  }
  header << "end\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string text = header.str();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<char> bytes;
  for (const auto& a : file.arrays) {
    bytes.resize(a.values.size() * 4);
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(a.values[i]);
      for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

ArrayFile read_array_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  ArrayFile file;
  file.meta.clear();
  struct Entry {
    std::string name;
    std::size_t rows, cols, offset;
  };
  std::vector<Entry> entries;
  std::string line;
  int line_no = 0;
  bool ended = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != "AFFPLAN-ARRAYS") throw ParseError(line_no, "not an affplan array file");
      continue;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end") {
      ended = true;
      break;
    } else if (key == "kind") {
      ls >> file.kind;
    } else if (key == "version") {
      ls >> file.version;
      if (file.version != ArrayFile::kFormatVersion) {
        throw ParseError(line_no, "unsupported format version " + std::to_string(file.version));
      }
    } else if (key == "seed") {
      ls >> file.seed;
    } else if (key == "meta") {
      std::string k;
      ls >> k;
      std::string v;
      std::getline(ls, v);
      if (!v.empty() && v.front() == ' ') v.erase(0, 1);
      file.meta.emplace_back(k, v);
    } else if (key == "array") {
      Entry e;
      ls >> e.name >> e.rows >> e.cols >> e.offset;
      entries.push_back(e);
    } else {
      throw ParseError(line_no, "unknown manifest key '" + key + "'");
    }
    if (ls.fail()) throw ParseError(line_no, "malformed manifest line");
  }
  if (!ended) throw ParseError(line_no, "manifest has no 'end' line");

  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const auto& e : entries) {
    const std::size_t count = e.rows * e.cols;
    if (e.offset + count * 4 > payload.size()) throw IoError("array '" + e.name + "' extends past end of file");
    ArrayFile::Array a;
    a.name = e.name;
    a.rows = e.rows;
    a.cols = e.cols;
    a.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[e.offset + i * 4 + b])) << (8 * b);
      }
      a.values[i] = std::bit_cast<float>(bits);
    }
    file.arrays.push_back(std::move(a));
  }
  return file;
}

void append_params(ArrayFile& file, const nn::ParamStore& params, bool with_optimizer_state) {
  for (const auto& p : params.arrays()) file.arrays.push_back({"param/" + p.name, p.rows, p.cols, p.value});
  if (with_optimizer_state) {
    file.meta.emplace_back("optimizer_step", std::to_string(params.step()));
    for (const auto& p : params.arrays()) {
      file.arrays.push_back({"adam_m/" + p.name, p.rows, p.cols, p.first_moment});
      file.arrays.push_back({"adam_v/" + p.name, p.rows, p.cols, p.second_moment});
    }
  }
}

void restore_params(const ArrayFile& file, nn::ParamStore& params) {
  for (auto& p : params.arrays()) {
    const auto& a = file.require_array("param/" + p.name);
    if (a.rows != p.rows || a.cols != p.cols) {
      throw ConfigError("checkpoint width conflict for '" + p.name + "': file has " + std::to_string(a.rows) + "x" +
                        std::to_string(a.cols) + ", model expects " + std::to_string(p.rows) + "x" +
                        std::to_string(p.cols));
    }
    p.value = a.values;
    if (const auto* m = file.find_array("adam_m/" + p.name)) p.first_moment = m->values;
    if (const auto* v = file.find_array("adam_v/" + p.name)) p.second_moment = v->values;
  }
  std::size_t expected = 0;
  for (const auto& a : file.arrays) expected += a.name.rfind("param/", 0) == 0;
  if (expected != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(expected) + " parameter arrays, model expects " +
                      std::to_string(params.size()));
  }
  if (const auto* s = file.find_meta("optimizer_step")) params.set_step(std::stoll(*s));
}

}  // namespace affplan
