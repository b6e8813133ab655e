fn main() {
    println!("pairsim");
}
