#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "reimts/autodiff.hpp"
#include "reimts/tensor.hpp"

namespace reimts {

/// Named parameter tensors in stable registration order. Names use a
/// module-path convention ("enc.l1.gru0.wz", "dec.ff1.w", ...) so
/// checkpoints and optimizer state stay keyed consistently.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor init) {
        if (index_.count(name)) throw std::logic_error("ParamStore: duplicate name " + name);
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(init));
        return entries_.back().second;
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
        return entries_[it->second].second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
        return entries_[it->second].second;
    }

    std::size_t size() const { return entries_.size(); }
    const std::pair<std::string, Tensor>& entry(std::size_t i) const { return entries_[i]; }
    std::pair<std::string, Tensor>& entry(std::size_t i) { return entries_[i]; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.first);
        return out;
    }

    long total_scalars() const {
        long n = 0;
        for (const auto& e : entries_) n += e.second.numel();
        return n;
    }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::map<std::string, std::size_t> index_;
};

/// Binds store parameters onto a tape, one leaf per name per forward pass,
/// so gradient contributions from repeated uses accumulate on a single node.
class BoundParams {
public:
    BoundParams(ad::Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

    ad::Var operator()(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        ad::Var v = tape_.leaf(store_.at(name), true);
        bound_.emplace(name, v);
        return v;
    }

    /// Gradient of the most recent backward() for every bound parameter.
    std::map<std::string, Tensor> gradients() const {
        std::map<std::string, Tensor> g;
        for (const auto& [name, var] : bound_) g[name] = tape_.node(var.idx).grad;
        return g;
    }

private:
    ad::Tape& tape_;
    const ParamStore& store_;
    std::map<std::string, ad::Var> bound_;
};

} // namespace reimts
