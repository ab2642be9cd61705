__device__ __forceinline__ int binary_search_before(const int *array, int lo, int hi, int target) {
  if (array[lo] > target) {
    return lo;
  }
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    if (array[mid] <= target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

template <typename T, int G>
__device__ void atomicAddGroup(T *array, int index, T value);

template <typename T, int G>
__device__ void segReduceGroup(T *array, int index, T value);

// point: nnz:32,col:1,r:1
// grid_size = 1
// block_size = 64
__global__ void spmm_nnz_multiple(const int *A2_pos, const int *A2_crd, const double *A_vals, const double *B_vals, double *C_vals, const int *i_blockStarts, int A1_dimension, int B2_dimension, int C2_dimension) {
  int block = blockIdx.x;
  int warp = threadIdx.x / 1;
  int thread = threadIdx.x % 1;
  for (int dense_val = 0; dense_val < 4; dense_val++) {
    int k = dense_val * 1 + thread;
    int pA2_begin = i_blockStarts[block];
    int pA2_end = i_blockStarts[block + 1];
    int i_pos = binary_search_before(A2_pos, pA2_begin, min(pA2_end + 1, A1_dimension), block * 2048 + warp * 32);
    int i = i_pos;
    double tnnzC = 0.0;
    for (int nnz = 0; nnz < 32; nnz++) {
      int fposA = block * 2048 + warp * 32 + nnz;
      if (fposA >= A2_pos[A1_dimension]) {
        break;
      }
      if (fposA == A2_pos[i_pos + 1]) {
        atomicAdd(&C_vals[i * C2_dimension + k], tnnzC);
        tnnzC = 0.0;
        while (fposA == A2_pos[i_pos + 1]) {
          i_pos = i_pos + 1;
          i = i_pos;
        }
      }
      int f = A2_crd[fposA];
      int kB = f * B2_dimension + k;
      tnnzC = tnnzC + A_vals[fposA] * B_vals[kB];
    }
    atomicAdd(&C_vals[i * C2_dimension + k], tnnzC);
  }
}
