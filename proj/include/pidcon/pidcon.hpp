#pragma once

#include "pidcon/tensor.hpp"
#include "pidcon/tape.hpp"
#include "pidcon/jet.hpp"
#include "pidcon/random.hpp"
#include "pidcon/geometry.hpp"
#include "pidcon/gp.hpp"
#include "pidcon/models.hpp"
#include "pidcon/realization.hpp"
#include "pidcon/physics.hpp"
#include "pidcon/dataset.hpp"
#include "pidcon/oracle.hpp"
#include "pidcon/evaluation.hpp"
#include "pidcon/training.hpp"
#include "pidcon/io.hpp"
