#pragma once

#include "fracdesign/core/error.hpp"
#include "fracdesign/core/parallel.hpp"
#include "fracdesign/mesh.hpp"
#include "fracdesign/extension.hpp"
#include "fracdesign/fracops.hpp"
#include "fracdesign/penalty.hpp"
#include "fracdesign/scheduler.hpp"
#include "fracdesign/diagnostics.hpp"
#include "fracdesign/validation.hpp"
#include "fracdesign/io.hpp"
