//! Small helpers for resizing dense arrays and column-wise vector math.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};

pub fn push_column(m: &mut Array2<f64>, col: ArrayView1<f64>) {
    debug_assert_eq!(m.nrows(), col.len());
    let col = col.insert_axis(Axis(1));
    *m = concatenate(Axis(1), &[m.view(), col]).expect("row counts agree");
}

pub fn push_row(m: &mut Array2<f64>, row: ArrayView1<f64>) {
    debug_assert_eq!(m.ncols(), row.len());
    let row = row.insert_axis(Axis(0));
    *m = concatenate(Axis(0), &[m.view(), row]).expect("column counts agree");
}

pub fn remove_column(m: &mut Array2<f64>, j: usize) {
    let left = m.slice(s![.., ..j]);
    let right = m.slice(s![.., j + 1..]);
    *m = concatenate(Axis(1), &[left, right]).expect("row counts agree");
}

pub fn remove_row(m: &mut Array2<f64>, i: usize) {
    let top = m.slice(s![..i, ..]);
    let bottom = m.slice(s![i + 1.., ..]);
    *m = concatenate(Axis(0), &[top, bottom]).expect("column counts agree");
}

pub fn push_elem(v: &mut Array1<f64>, x: f64) {
    let mut raw: Vec<f64> = v.iter().copied().collect();
    raw.push(x);
    *v = Array1::from(raw);
}

pub fn remove_elem(v: &mut Array1<f64>, j: usize) {
    let mut raw: Vec<f64> = v.iter().copied().collect();
    raw.remove(j);
    *v = Array1::from(raw);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn resize_helpers() {
        let mut m = array![[1.0, 2.0], [3.0, 4.0]];
        push_column(&mut m, array![5.0, 6.0].view());
        assert_eq!(m, array![[1.0, 2.0, 5.0], [3.0, 4.0, 6.0]]);
        remove_column(&mut m, 1);
        assert_eq!(m, array![[1.0, 5.0], [3.0, 6.0]]);
        push_row(&mut m, array![7.0, 8.0].view());
        remove_row(&mut m, 0);
        assert_eq!(m, array![[3.0, 6.0], [7.0, 8.0]]);

        let mut empty = Array2::<f64>::zeros((3, 0));
        push_column(&mut empty, array![1.0, 2.0, 3.0].view());
        assert_eq!(empty.dim(), (3, 1));
        let mut no_rows = Array2::<f64>::zeros((0, 2));
        push_row(&mut no_rows, array![1.0, 2.0].view());
        assert_eq!(no_rows, array![[1.0, 2.0]]);

        let mut v = array![1.0, 2.0, 3.0];
        remove_elem(&mut v, 1);
        push_elem(&mut v, 9.0);
        assert_eq!(v, array![1.0, 3.0, 9.0]);
    }
}
