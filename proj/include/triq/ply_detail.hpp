#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "triq/errors.hpp"

namespace triq::detail {

// Minimal PLY header model: enough to read meshes and point clouds written by
// common tools (ascii or binary little-endian, scalar and list properties).

enum class PlyType : std::uint8_t { I8, U8, I16, U16, I32, U32, F32, F64 };

inline PlyType ply_type_of(const std::string& s) {
    if (s == "char" || s == "int8") return PlyType::I8;
    if (s == "uchar" || s == "uint8") return PlyType::U8;
    if (s == "short" || s == "int16") return PlyType::I16;
    if (s == "ushort" || s == "uint16") return PlyType::U16;
    if (s == "int" || s == "int32") return PlyType::I32;
    if (s == "uint" || s == "uint32") return PlyType::U32;
    if (s == "float" || s == "float32") return PlyType::F32;
    if (s == "double" || s == "float64") return PlyType::F64;
    throw ParseError("ply: unknown property type '" + s + "'");
}

inline std::size_t ply_type_size(PlyType t) {
    switch (t) {
        case PlyType::I8:
        case PlyType::U8: return 1;
        case PlyType::I16:
        case PlyType::U16: return 2;
        case PlyType::I32:
        case PlyType::U32:
        case PlyType::F32: return 4;
        default: return 8;
    }
}

struct PlyProperty {
    std::string name;
    bool is_list = false;
    PlyType count_type = PlyType::U8;  // list only
    PlyType type = PlyType::F32;
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
};

struct PlyHeader {
    bool binary = false;  // false: ascii; binary is always little-endian here
    std::vector<PlyElement> elements;
};

inline PlyHeader read_ply_header(std::istream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "ply") throw ParseError(path + ": missing 'ply' magic");
    PlyHeader h;
    bool have_format = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok.empty() || tok == "comment" || tok == "obj_info") continue;
        if (tok == "format") {
            std::string fmt, ver;
            ls >> fmt >> ver;
            if (fmt == "ascii")
                h.binary = false;
            else if (fmt == "binary_little_endian")
                h.binary = true;
            else
                throw ParseError(path + ": unsupported ply format '" + fmt + "'");
            have_format = true;
        } else if (tok == "element") {
            PlyElement e;
            ls >> e.name >> e.count;
            if (ls.fail()) throw ParseError(path + ": bad element line: " + line);
            h.elements.push_back(e);
        } else if (tok == "property") {
            if (h.elements.empty()) throw ParseError(path + ": property before element");
            PlyProperty p;
            std::string t1;
            ls >> t1;
            if (t1 == "list") {
                std::string tc, tv;
                ls >> tc >> tv >> p.name;
                p.is_list = true;
                p.count_type = ply_type_of(tc);
                p.type = ply_type_of(tv);
            } else {
                p.type = ply_type_of(t1);
                ls >> p.name;
            }
            if (p.name.empty()) throw ParseError(path + ": bad property line: " + line);
            h.elements.back().properties.push_back(p);
        } else if (tok == "end_header") {
            if (!have_format) throw ParseError(path + ": no format line");
            return h;
        } else {
            throw ParseError(path + ": unexpected header token '" + tok + "'");
        }
    }
    throw ParseError(path + ": header not terminated");
}

// Scalar readers. Binary data is little-endian; this code assumes a
// little-endian host (checked at compile time where used).
inline double read_binary_scalar(std::istream& in, PlyType t, const std::string& path) {
    char buf[8];
    in.read(buf, static_cast<std::streamsize>(ply_type_size(t)));
    if (!in) throw ParseError(path + ": truncated binary data");
    switch (t) {
        case PlyType::I8: return static_cast<double>(static_cast<std::int8_t>(buf[0]));
        case PlyType::U8: return static_cast<double>(static_cast<std::uint8_t>(buf[0]));
        case PlyType::I16: { std::int16_t v; std::memcpy(&v, buf, 2); return v; }
        case PlyType::U16: { std::uint16_t v; std::memcpy(&v, buf, 2); return v; }
        case PlyType::I32: { std::int32_t v; std::memcpy(&v, buf, 4); return v; }
        case PlyType::U32: { std::uint32_t v; std::memcpy(&v, buf, 4); return v; }
        case PlyType::F32: { float v; std::memcpy(&v, buf, 4); return v; }
        default: { double v; std::memcpy(&v, buf, 8); return v; }
    }
}

inline double read_ascii_scalar(std::istream& in, const std::string& path) {
    double v;
    in >> v;
    if (in.fail()) throw ParseError(path + ": truncated or non-numeric ascii data");
    return v;
}

}  // namespace triq::detail
