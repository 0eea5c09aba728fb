#pragma once

#include "viscoplate/error.hpp"
#include "viscoplate/numerics.hpp"
#include "viscoplate/kernels.hpp"
#include "viscoplate/spectral.hpp"
#include "viscoplate/dynamics.hpp"
#include "viscoplate/diagnostics.hpp"
#include "viscoplate/scenario.hpp"
