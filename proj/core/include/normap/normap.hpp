#pragma once

#include "normap/distribution.hpp"
#include "normap/error.hpp"
#include "normap/estimation.hpp"
#include "normap/geometry.hpp"
#include "normap/interpolation.hpp"
#include "normap/io.hpp"
#include "normap/normative.hpp"
#include "normap/synthesis.hpp"
