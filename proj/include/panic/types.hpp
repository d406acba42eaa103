//
// Core dense types shared by every module: scalar aliases, the 3D grid
// descriptor, single-channel volumes and multi-channel feature maps stored
// as [channels x voxels] matrices, and the error taxonomy.
//

#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <stdexcept>
#include <string>
#include <vector>

namespace panic {

// Production pipeline scalar. Tests instantiate the templates with double
// where finite-difference accuracy matters.
using Real = float;

template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using ArrX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

// Errors are mapped onto the CLI exit codes: 2 configuration, 3 data,
// 4 numeric failure.
class PanicError : public std::runtime_error {
public:
    PanicError(std::string msg, int exit_code)
        : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
    int exit_code() const { return exit_code_; }

private:
    int exit_code_;
};

class ConfigError : public PanicError {
public:
    explicit ConfigError(const std::string& msg) : PanicError(msg, 2) {}
};

class InvalidInput : public PanicError {
public:
    explicit InvalidInput(const std::string& msg) : PanicError(msg, 3) {}
};

class DataError : public PanicError {
public:
    explicit DataError(const std::string& msg) : PanicError(msg, 3) {}
};

class NumericError : public PanicError {
public:
    explicit NumericError(const std::string& msg) : PanicError(msg, 4) {}
};

// Spatial extent of a volume or feature map. Linear layout is W-fastest:
// index(i, j, k) with i < h, j < d, k < w.
struct Grid3 {
    int h = 0;
    int d = 0;
    int w = 0;

    Grid3() = default;
    Grid3(int h_, int d_, int w_) : h(h_), d(d_), w(w_) {}
    static Grid3 cube(int n) { return Grid3(n, n, n); }

    Index voxels() const { return Index(h) * d * w; }
    Index index(int i, int j, int k) const { return (Index(i) * d + j) * w + k; }
    bool operator==(const Grid3& o) const { return h == o.h && d == o.d && w == o.w; }
    bool operator!=(const Grid3& o) const { return !(*this == o); }
    std::string str() const {
        return std::to_string(h) + "x" + std::to_string(d) + "x" + std::to_string(w);
    }
};

// One subject's single-channel 3D image.
template <class Scalar>
struct Volume {
    Grid3 grid;
    VecX<Scalar> data;  // length grid.voxels(), W-fastest

    Volume() = default;
    Volume(Grid3 g, VecX<Scalar> v) : grid(g), data(std::move(v)) {}
    static Volume zero(Grid3 g) { return Volume(g, VecX<Scalar>::Zero(g.voxels())); }

    Scalar at(int i, int j, int k) const { return data[grid.index(i, j, k)]; }
    Scalar& at(int i, int j, int k) { return data[grid.index(i, j, k)]; }
};

// Multi-channel map over a grid; rows are channels, columns voxels.
template <class Scalar>
struct FeatureMap {
    Grid3 grid;
    MatX<Scalar> chan;

    FeatureMap() = default;
    FeatureMap(Grid3 g, Index channels) : grid(g), chan(MatX<Scalar>::Zero(channels, g.voxels())) {}
    FeatureMap(Grid3 g, MatX<Scalar> m) : grid(g), chan(std::move(m)) {}
    Index channels() const { return chan.rows(); }
};

template <class Scalar>
bool all_finite(const MatX<Scalar>& m) {
    return m.allFinite();
}

template <class Scalar>
bool all_finite(const VecX<Scalar>& v) {
    return v.allFinite();
}

}  // namespace panic
