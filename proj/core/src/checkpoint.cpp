// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/checkpoint.hpp"

#include <algorithm>
#include <map>

#include "fusetrack/container.hpp"
#include "fusetrack/errors.hpp"

namespace fusetrack {

namespace {

void put_matrix(Container& c, const std::string& name, const ad::Matrix& m) {
  c.put_f64(name, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
            std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
}

ad::Matrix get_matrix(const Container& c, const std::string& name) {
  const ArrayRecord& rec = c.record(name);
  if (rec.dims.size() != 2) throw IoError("checkpoint array '" + name + "' is not 2-D");
  const auto values = c.get_f64(name);
  ad::Matrix m(static_cast<Eigen::Index>(rec.dims[0]), static_cast<Eigen::Index>(rec.dims[1]));
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ad::ParameterSet& params, const ad::Adam* optimizer,
                     const std::string& meta_json) {
  Container c;
  c.put_text("meta", meta_json);
  for (const ad::Parameter* p : params.all()) put_matrix(c, p->name, p->value);
  if (optimizer != nullptr) {
    const double steps = static_cast<double>(optimizer->steps());
    c.put_f64("opt/steps", {1}, std::span<const double>(&steps, 1));
    for (const auto& [name, mom] : optimizer->moments()) {
      put_matrix(c, "opt/m/" + name, mom.m);
      put_matrix(c, "opt/v/" + name, mom.v);
    }
  }
  const auto tmp = path.string() + ".tmp";
  c.save(tmp);
  std::filesystem::rename(tmp, path);
}

std::string load_checkpoint(const std::filesystem::path& path, ad::ParameterSet& params, ad::Adam* optimizer) {
  const Container c = Container::load(path);
  for (ad::Parameter* p : params.all()) {
    if (!c.contains(p->name)) throw IoError("checkpoint lacks parameter '" + p->name + "'");
    ad::Matrix m = get_matrix(c, p->name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
      throw IoError("checkpoint parameter '" + p->name + "' has shape " + ad::shape_str(m) + ", model expects " +
                    ad::shape_str(p->value));
    }
    p->value = std::move(m);
  }
  if (optimizer != nullptr && c.contains("opt/steps")) {
    std::map<std::string, ad::Adam::Moments> moments;
    for (const auto& name : c.names()) {
      if (name.rfind("opt/m/", 0) == 0) {
        const std::string pname = name.substr(6);
        moments[pname] = {get_matrix(c, name), get_matrix(c, "opt/v/" + pname)};
      }
    }
    optimizer->restore(static_cast<long long>(c.get_f64("opt/steps")[0]), std::move(moments));
  }
  return c.get_text("meta");
}

std::string read_checkpoint_meta(const std::filesystem::path& path) { return Container::load(path).get_text("meta"); }

}  // namespace fusetrack
