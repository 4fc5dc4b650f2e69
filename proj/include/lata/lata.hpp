#pragma once

#include "lata/checkpoint.hpp"
#include "lata/delta.hpp"
#include "lata/dtype.hpp"
#include "lata/engine.hpp"
#include "lata/error.hpp"
#include "lata/fixture.hpp"
#include "lata/format.hpp"
#include "lata/partition.hpp"
#include "lata/recipe.hpp"
#include "lata/report.hpp"
#include "lata/transforms.hpp"
#include "lata/vector_space.hpp"
#include "lata/weights.hpp"
