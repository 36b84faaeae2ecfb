fn main(){let mut s=String::new();std::io::stdin().read_line(&mut s).unwrap();let v:Vec<i64>=s.trim().split(' ').map(|t|t.parse().unwrap()).collect();println!("{}",v[0]+v[1]);//v2
}
